use std::path::{Path, PathBuf};

use chv_core::experiments::{ParticleConfig, Regularization, SectioningConfig, TwoPlaneConfig};
use chv_core::{DetectionConfig, Geometry, NoiseSpec, SceneSpec, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 7;

/// Whole experiment description, read from TOML. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub geometry: Geometry,
    pub masks: MaskSection,
    pub scene: SceneSection,
    pub reconstruct: ReconstructSection,
    pub analysis: AnalysisSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Partition,
    Bernoulli,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub kind: MaskKind,
    pub frames: usize,
    pub superpixel: usize,
    /// Open probability for Bernoulli masks; ignored otherwise.
    pub density: Option<f64>,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self { kind: MaskKind::Partition, frames: 10, superpixel: 1, density: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TwoPlane,
    Particles,
    Sectioning,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub preset: Preset,
    /// Plane separations for the two-plane preset, one output set each.
    pub dz: Vec<f64>,
    pub two_plane: TwoPlaneConfig,
    pub particles: ParticleConfig,
    pub sectioning: SectioningConfig,
    /// Scene for the custom preset.
    pub spec: Option<SceneSpec>,
    pub noise: NoiseSpec,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            preset: Preset::TwoPlane,
            dz: vec![0.005, 0.015, 0.030],
            two_plane: TwoPlaneConfig::default(),
            particles: ParticleConfig::default(),
            sectioning: SectioningConfig::default(),
            spec: None,
            noise: NoiseSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cs,
    Bp,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    /// Directory written by `simulate`; defaults to the output directory.
    pub input: Option<PathBuf>,
    pub method: Method,
    /// Absolute spatial weight. When absent it is `regularization.lambda_scale`
    /// times the data-relative default.
    pub lambda: Option<f64>,
    pub regularization: Regularization,
    pub solver: SolverConfig,
    /// Write one PNG per depth slice and frame.
    pub previews: bool,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            input: None,
            method: Method::Both,
            lambda: None,
            regularization: Regularization::default(),
            solver: SolverConfig::default(),
            previews: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Reconstructed volume; defaults to `cs.chv` in the output directory.
    pub volume: Option<PathBuf>,
    /// Geometry JSON; defaults to `geometry.json` next to the volume.
    pub geometry: Option<PathBuf>,
    pub frame: usize,
    /// Pixels `[x, y]` at which to record focus profiles.
    pub probes: Vec<[usize; 2]>,
    pub window: usize,
    pub detect: bool,
    pub detection: DetectionConfig,
    pub max_jump: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            volume: None,
            geometry: None,
            frame: 0,
            probes: Vec::new(),
            window: chv_core::analysis::DEFAULT_WINDOW,
            detect: true,
            detection: DetectionConfig::default(),
            max_jump: chv_core::analysis::DEFAULT_MAX_JUMP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub fractions: Vec<f64>,
    pub dz: Vec<f64>,
    /// Run only this `[fraction, dz]` cell.
    pub cell: Option<[f64; 2]>,
    pub two_plane: TwoPlaneConfig,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self { fractions: vec![1.0, 0.5, 0.2, 0.1], dz: vec![0.005, 0.015, 0.030], cell: None, two_plane: TwoPlaneConfig::default() }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Applies command-line overrides. The resolved seed reaches every
    /// random component so one number reproduces a run.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed.or(self.seed).unwrap_or(DEFAULT_SEED);
        self.seed = Some(seed);
        self.scene.two_plane.seed = seed;
        self.scene.particles.seed = seed;
        self.scene.sectioning.seed = seed;
        self.benchmark.two_plane.seed = seed;
        if out.is_some() {
            self.out = out;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("chv-out"))
    }

    /// Canonical text of the resolved configuration, hashed into the
    /// manifest. The output location is left out so reruns elsewhere match.
    pub fn canonical(&self) -> String {
        toml::to_string(&Self { out: None, ..self.clone() }).unwrap_or_default()
    }
}
