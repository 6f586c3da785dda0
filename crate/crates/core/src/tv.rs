//! 4D total variation and its proximal operator.
//!
//! Differences are forward differences with a zero difference at the last
//! sample of each axis. The x, y and depth axes share one weight and the time
//! axis has its own, so the isotropic gradient magnitude at a voxel is
//! `sqrt(ws²(dx² + dy² + dz²) + wt²·dt²)`.

use num_complex::Complex64;

use crate::model::{Object4D, Shape4};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvWeights {
    pub spatial: f64,
    pub temporal: f64,
}

impl TvWeights {
    /// Relative axis weights: spatial 1 and temporal `λt/λs`, or temporal only
    /// when the spatial weight is zero.
    pub fn from_config(cfg: &SolverConfig) -> Self {
        if cfg.lambda_spatial > 0.0 {
            Self { spatial: 1.0, temporal: cfg.lambda_temporal / cfg.lambda_spatial }
        } else if cfg.lambda_temporal > 0.0 {
            Self { spatial: 0.0, temporal: 1.0 }
        } else {
            Self { spatial: 0.0, temporal: 0.0 }
        }
    }

    fn axes(&self) -> [f64; 4] {
        [self.spatial, self.spatial, self.spatial, self.temporal]
    }
}

/// Overall regularization strength multiplying the weighted TV.
pub fn tv_scale(cfg: &SolverConfig) -> f64 {
    if cfg.lambda_spatial > 0.0 {
        cfg.lambda_spatial
    } else {
        cfg.lambda_temporal
    }
}

/// Axis geometry in (x, y, depth, time) order.
#[derive(Debug, Clone, Copy)]
struct Axes {
    size: [usize; 4],
    stride: [usize; 4],
    weight: [f64; 4],
}

impl Axes {
    fn new(shape: Shape4, weights: TvWeights) -> Self {
        let plane = shape.ny * shape.nx;
        Self {
            size: [shape.nx, shape.ny, shape.nd, shape.nt],
            stride: [1, shape.nx, plane, shape.nd * plane],
            weight: weights.axes(),
        }
    }

    fn lipschitz(&self) -> f64 {
        (0..4).filter(|&a| self.size[a] > 1).map(|a| 4.0 * self.weight[a] * self.weight[a]).sum()
    }

    /// Calls `f(index, [x, y, depth, t])` for every voxel in storage order.
    fn for_each(&self, mut f: impl FnMut(usize, [usize; 4])) {
        let mut i = 0;
        for t in 0..self.size[3] {
            for n in 0..self.size[2] {
                for y in 0..self.size[1] {
                    for x in 0..self.size[0] {
                        f(i, [x, y, n, t]);
                        i += 1;
                    }
                }
            }
        }
    }

    fn grad_at(&self, u: &[f64], i: usize, c: [usize; 4]) -> [f64; 4] {
        let mut g = [0.0; 4];
        for a in 0..4 {
            if c[a] + 1 < self.size[a] && self.weight[a] != 0.0 {
                g[a] = self.weight[a] * (u[i + self.stride[a]] - u[i]);
            }
        }
        g
    }

    /// Negative adjoint of the weighted forward-difference gradient.
    fn div(&self, p: &[[f64; 4]], out: &mut [f64]) {
        self.for_each(|i, c| {
            let mut acc = 0.0;
            for a in 0..4 {
                if self.weight[a] == 0.0 {
                    continue;
                }
                if c[a] + 1 < self.size[a] {
                    acc += self.weight[a] * p[i][a];
                }
                if c[a] > 0 {
                    acc -= self.weight[a] * p[i - self.stride[a]][a];
                }
            }
            out[i] = acc;
        });
    }
}

/// Isotropic weighted TV of a real volume.
pub fn tv_real(u: &[f64], shape: Shape4, weights: TvWeights) -> f64 {
    let axes = Axes::new(shape, weights);
    let mut total = 0.0;
    axes.for_each(|i, c| {
        let g = axes.grad_at(u, i, c);
        total += (g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]).sqrt();
    });
    total
}

/// TV of the real part plus TV of the imaginary part, with axis weights from `cfg`.
pub fn tv_norm(obj: &Object4D, cfg: &SolverConfig) -> f64 {
    let weights = TvWeights::from_config(cfg);
    let (re, im) = split(obj.data());
    tv_real(&re, obj.shape(), weights) + tv_real(&im, obj.shape(), weights)
}

/// Chambolle dual-projection solver for `argmin_u ½‖u − f‖² + weight·TV(u)`
/// on a real volume. The dual variable persists between calls so repeated
/// denoising of slowly changing inputs starts from the previous solution.
#[derive(Debug, Clone)]
pub struct ChambolleProx {
    shape: Shape4,
    axes: Axes,
    iterations: usize,
    dual: Vec<[f64; 4]>,
}

impl ChambolleProx {
    pub fn new(shape: Shape4, weights: TvWeights, iterations: usize) -> Self {
        Self {
            shape,
            axes: Axes::new(shape, weights),
            iterations,
            dual: vec![[0.0; 4]; shape.len()],
        }
    }

    pub fn reset(&mut self) {
        self.dual.iter_mut().for_each(|p| *p = [0.0; 4]);
    }

    pub fn denoise(&mut self, f: &[f64], weight: f64) -> Vec<f64> {
        assert_eq!(f.len(), self.shape.len(), "input does not match prox shape");
        let lipschitz = self.axes.lipschitz();
        if weight <= 0.0 || lipschitz == 0.0 {
            return f.to_vec();
        }
        let step = 1.0 / lipschitz;
        let inv_weight = 1.0 / weight;
        let mut div = vec![0.0; f.len()];
        let mut v = vec![0.0; f.len()];
        for _ in 0..self.iterations {
            self.axes.div(&self.dual, &mut div);
            v.iter_mut().zip(&div).zip(f).for_each(|((v, d), f)| *v = d - f * inv_weight);
            let axes = self.axes;
            let dual = &mut self.dual;
            axes.for_each(|i, c| {
                let g = axes.grad_at(&v, i, c);
                let mag = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]).sqrt();
                let denom = 1.0 + step * mag;
                for a in 0..4 {
                    dual[i][a] = (dual[i][a] + step * g[a]) / denom;
                }
            });
        }
        self.axes.div(&self.dual, &mut div);
        f.iter().zip(&div).map(|(f, d)| f - weight * d).collect()
    }
}

/// Warm-started complex TV prox: real and imaginary parts handled independently.
#[derive(Debug, Clone)]
pub struct TvDenoiser {
    re: ChambolleProx,
    im: ChambolleProx,
}

impl TvDenoiser {
    pub fn new(shape: Shape4, weights: TvWeights, iterations: usize) -> Self {
        let prox = ChambolleProx::new(shape, weights, iterations);
        Self { re: prox.clone(), im: prox }
    }

    pub fn denoise(&mut self, obj: &Object4D, weight: f64) -> Object4D {
        let (re, im) = split(obj.data());
        let (re_out, im_out) = rayon::join(|| self.re.denoise(&re, weight), || self.im.denoise(&im, weight));
        let data = re_out.into_iter().zip(im_out).map(|(r, i)| Complex64::new(r, i)).collect();
        Object4D::new(obj.shape(), data).expect("denoised volume keeps its shape")
    }
}

/// One cold-started prox evaluation with `cfg.tv_inner_iters` dual iterations.
pub fn tv_denoise(obj: &Object4D, weight: f64, cfg: &SolverConfig) -> Object4D {
    if weight <= 0.0 {
        return obj.clone();
    }
    TvDenoiser::new(obj.shape(), TvWeights::from_config(cfg), cfg.tv_inner_iters).denoise(obj, weight)
}

fn split(data: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    (data.iter().map(|v| v.re).collect(), data.iter().map(|v| v.im).collect())
}
