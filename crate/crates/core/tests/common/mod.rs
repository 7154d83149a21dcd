//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use csipos::config::ExperimentConfig;
use csipos::csi::ComplexCsiMatrix;
use csipos::geometry::CameraModel;
use csipos::scene::{Dataset, PolarPosition, SceneConfig, Snapshot, SplitKind};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn desk_scene() -> SceneConfig {
    ExperimentConfig::desk_scale().scene
}

pub fn random_camera<R: Rng>(rng: &mut R) -> CameraModel {
    CameraModel {
        los_azimuth_deg: rng.gen_range(-180.0..360.0),
        los_elevation_deg: rng.gen_range(-60.0..60.0),
        horiz_view_deg: rng.gen_range(1.0..170.0),
        vert_view_deg: rng.gen_range(1.0..170.0),
        pixel_width: rng.gen_range(1..4000),
        pixel_height: rng.gen_range(1..4000),
    }
}

/// Finite f64 drawn from a wide range of magnitudes, including signed zeros
/// and subnormals.
pub fn awkward_f64<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..8) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::MIN_POSITIVE / 8.0,
        3 => rng.gen_range(-1e300..1e300),
        _ => rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-12..4)),
    }
}

/// Dataset with random shape, split kind and contents; not necessarily
/// physically meaningful.
pub fn random_dataset(seed: u64) -> Dataset {
    let mut r = rng(seed);
    let scene = SceneConfig {
        num_antennas: r.gen_range(2..6),
        num_subcarriers: r.gen_range(1..6),
        seed: r.gen_range(0..=i64::MAX as u64),
        csi_noise_snr_db: if r.gen_bool(0.2) { f64::INFINITY } else { r.gen_range(0.0..40.0) },
        ..SceneConfig::default()
    };
    let kind = [SplitKind::Pretrain, SplitKind::Labeled, SplitKind::Validation][r.gen_range(0..3)];
    let count = r.gen_range(0..12);
    let snapshots = (0..count)
        .map(|t| {
            let vehicles = r.gen_range(0..4);
            let csi = (0..vehicles)
                .map(|_| {
                    let entries = (0..scene.num_antennas * scene.num_subcarriers)
                        .map(|_| Complex64::new(awkward_f64(&mut r), awkward_f64(&mut r)))
                        .collect();
                    ComplexCsiMatrix::from_entries(scene.num_antennas, scene.num_subcarriers, entries).unwrap()
                })
                .collect();
            let detections = (0..r.gen_range(0..5)).map(|_| r.gen_range(0.0..=180.0)).collect();
            let truth = (kind != SplitKind::Pretrain).then(|| {
                (0..vehicles)
                    .map(|_| PolarPosition {
                        azimuth_deg: awkward_f64(&mut r),
                        distance_m: awkward_f64(&mut r),
                    })
                    .collect()
            });
            Snapshot {
                time_index: t * 3 + r.gen_range(0..3),
                csi,
                detected_azimuths: detections,
                truth_positions: truth,
            }
        })
        .collect();
    Dataset { kind, scene, snapshots }
}

/// Bitwise equality of every float in two datasets.
pub fn bit_identical(a: &Dataset, b: &Dataset) -> bool {
    let bits = |v: f64| v.to_bits();
    a.kind == b.kind
        && a.scene == b.scene
        && a.snapshots.len() == b.snapshots.len()
        && a.snapshots.iter().zip(&b.snapshots).all(|(x, y)| {
            x.time_index == y.time_index
                && x.csi.len() == y.csi.len()
                && x.csi.iter().zip(&y.csi).all(|(h, g)| {
                    h.entries()
                        .iter()
                        .zip(g.entries())
                        .all(|(e, f)| bits(e.re) == bits(f.re) && bits(e.im) == bits(f.im))
                })
                && x.detected_azimuths.iter().map(|&v| bits(v)).eq(y.detected_azimuths.iter().map(|&v| bits(v)))
                && match (&x.truth_positions, &y.truth_positions) {
                    (None, None) => true,
                    (Some(p), Some(q)) => p.len() == q.len()
                        && p.iter().zip(q).all(|(m, n)| {
                            bits(m.azimuth_deg) == bits(n.azimuth_deg) && bits(m.distance_m) == bits(n.distance_m)
                        }),
                    _ => false,
                }
        })
}

/// Tiny end-to-end configuration that runs in seconds.
pub fn miniature_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.scene.num_antennas = 4;
    cfg.scene.num_subcarriers = 8;
    cfg.data.pretrain_size = 24;
    cfg.data.labeled_size = 12;
    cfg.data.validation_size = 10;
    cfg.model.block_channels = [4, 6];
    cfg.model.feature_dim = 8;
    cfg.model.hidden_width = 12;
    cfg.pretrain.iterations = 20;
    cfg.pretrain.batch_size = 4;
    cfg.downstream.epochs = 6;
    cfg.downstream.batch_size = 4;
    cfg.downstream.eval_every = 2;
    cfg.grid.labeled_sizes = vec![6, 12];
    cfg.grid.seeds = vec![1, 2];
    cfg
}
