use chv_core::io::{
    import_grayscale, read_mask_stack, read_raster, write_mask_stack, write_png, write_raster, Dtype, Raster,
    RasterData,
};
use chv_core::masks::generate_partition_masks;
use chv_core::model::{Hologram, HologramKind, Object4D, Shape4};
use chv_core::{ComplexField, Error};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_F32: &[u8] = include_bytes!("data/golden_f32.chv");
const GOLDEN_C64: &[u8] = include_bytes!("data/golden_c64.chv");

fn random_volume(shape: Shape4, seed: u64) -> Object4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Values exactly representable in f32 so the round trip is lossless.
    let data = (0..shape.len())
        .map(|_| Complex64::new((rng.random::<f32>() - 0.5) as f64, (rng.random::<f32>() * 3.0) as f64))
        .collect();
    Object4D::new(shape, data).unwrap()
}

#[test]
fn golden_real_file() {
    let r = Raster::decode(GOLDEN_F32).unwrap();
    assert_eq!(r.header.dtype, Dtype::F32);
    assert_eq!(r.header.shape, vec![2, 3]);
    assert_eq!(r.header.kind, "subtracted");
    assert_eq!(r.data, RasterData::Real(vec![1.0, -2.5, 0.15625, 1024.0, -0.0, 3.0e-3]));
    let h = r.to_hologram().unwrap();
    assert_eq!(h.kind(), HologramKind::Subtracted);
    assert_eq!((h.nx(), h.ny()), (3, 2));
    // Our own writer reproduces the file byte for byte.
    assert_eq!(r.encode().unwrap(), GOLDEN_F32);
}

#[test]
fn golden_complex_file() {
    let r = Raster::decode(GOLDEN_C64).unwrap();
    assert_eq!(r.header.dtype, Dtype::C64);
    let expected = vec![
        Complex32::new(1.0, -1.0),
        Complex32::new(0.5, 2.0),
        Complex32::new(-4.0, 0.25),
        Complex32::new(0.0, 1.0),
    ];
    assert_eq!(r.data, RasterData::Complex(expected));
    let obj = r.to_object().unwrap();
    assert_eq!(obj.shape(), Shape4 { nt: 1, nd: 2, ny: 1, nx: 2 });
    assert_eq!(obj.get(0, 1, 0, 0), Complex64::new(-4.0, 0.25));
    assert_eq!(r.encode().unwrap(), GOLDEN_C64);
}

#[test]
fn volume_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.chv");
    let obj = random_volume(Shape4 { nt: 3, nd: 2, ny: 5, nx: 7 }, 11);
    write_raster(&path, &Raster::from_object(&obj, 5.86e-6, 532e-9).unwrap()).unwrap();
    let back = read_raster(&path).unwrap().to_object().unwrap();
    assert_eq!(back.shape(), obj.shape());
    for (a, b) in back.data().iter().zip(obj.data()) {
        assert_eq!(a.re.to_bits(), b.re.to_bits());
        assert_eq!(a.im.to_bits(), b.im.to_bits());
    }
    let raster = read_raster(&path).unwrap();
    let again = dir.path().join("again.chv");
    write_raster(&again, &raster).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn large_volume_header_shape() {
    let obj = Object4D::zeros(Shape4 { nt: 1, nd: 120, ny: 285, nx: 285 });
    let r = Raster::from_object(&obj, 5.86e-6, 532e-9).unwrap();
    assert_eq!(r.header.shape, vec![1, 120, 285, 285]);
    let bytes = r.encode().unwrap();
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 8 + header_len + 285 * 285 * 120 * 8);
}

#[test]
fn truncated_file_reports_byte_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.chv");
    std::fs::write(&path, &GOLDEN_F32[..GOLDEN_F32.len() - 4]).unwrap();
    match read_raster(&path) {
        Err(Error::Corrupt(msg)) => {
            assert!(msg.contains("payload has 20 bytes"), "{msg}");
            assert!(msg.contains("expected 24"), "{msg}");
        }
        other => panic!("expected corruption error, got {other:?}"),
    }
}

#[test]
fn field_and_hologram_round_trip() {
    let field = ComplexField::from_fn(4, 3, 2e-6, |x, y| Complex64::new(x as f64 * 0.5, -(y as f64))).unwrap();
    let r = Raster::decode(&Raster::from_field(&field, 532e-9).unwrap().encode().unwrap()).unwrap();
    assert_eq!(r.to_field().unwrap(), field);

    let h = Hologram::new(3, 2, HologramKind::Raw, vec![0.0, 1.0, 2.0, 3.5, 0.25, 8.0]).unwrap();
    let r = Raster::decode(&Raster::from_hologram(&h, 2e-6, 532e-9).unwrap().encode().unwrap()).unwrap();
    assert_eq!(r.to_hologram().unwrap(), h);
    assert!(r.to_field().is_ok());
}

#[test]
fn mask_stack_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let stack = generate_partition_masks(16, 8, 4, 2, 99).unwrap();
    let written = write_mask_stack(dir.path(), &stack, 5.86e-6).unwrap();
    assert_eq!(written.len(), 5);
    assert_eq!(read_mask_stack(dir.path()).unwrap(), stack);

    // A real-valued stack in one raster is thresholded at one half.
    let frames: Vec<f32> = (0..2 * 4 * 4).map(|i| if i % 3 == 0 { 0.9 } else { 0.1 }).collect();
    let r = Raster::new(vec![2, 4, 4], 1e-5, 0.0, "mask", RasterData::Real(frames)).unwrap();
    let masks = r.to_mask_stack(1).unwrap();
    assert_eq!(masks.frame_count(), 2);
    assert_eq!(masks.frame(0)[0], 1);
    assert_eq!(masks.frame(0)[1], 0);
}

#[test]
fn grayscale_ramp_import() {
    let dir = tempfile::tempdir().unwrap();
    // 8-bit PGM ramp written by hand.
    let mut pgm = b"P5\n4 2\n255\n".to_vec();
    pgm.extend_from_slice(&[0, 85, 170, 255, 255, 170, 85, 0]);
    let pgm_path = dir.path().join("ramp.pgm");
    std::fs::write(&pgm_path, pgm).unwrap();
    let (nx, ny, v) = import_grayscale(&pgm_path).unwrap();
    assert_eq!((nx, ny), (4, 2));
    assert_eq!(v[0], 0.0);
    assert_eq!(v[3], 1.0);
    assert!((v[1] - 1.0 / 3.0).abs() < 1e-12);

    let png_path = dir.path().join("ramp.png");
    write_png(&png_path, &[0.0, 1.0, 2.0, 3.0], 4, 1).unwrap();
    let (_, _, v) = import_grayscale(&png_path).unwrap();
    assert_eq!(v, vec![0.0, 85.0 / 255.0, 170.0 / 255.0, 1.0]);
}
