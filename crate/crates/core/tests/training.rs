mod common;

use std::f64::consts::PI;
use std::path::PathBuf;

use csipos::error::Error;
use csipos::labels::{AngularDistribution, AngularGrid};
use csipos::nn::checkpoint::Checkpoint;
use csipos::nn::Module;
use csipos::nn::optim::{sgd_step, StepDecay};
use csipos::scene::PolarPosition;
use csipos::train::data::{magnitude_scale, LabeledSet, PretrainSet};
use csipos::train::downstream::{downstream_step, downstream_train};
use csipos::train::eval::{bin_errors, EvalReport};
use csipos::train::experiment::{
    new_angular_head, new_encoder, new_polar_head, pretrain_run, run_rng, ExperimentData, STREAM_PRETRAIN,
};
use csipos::train::loss::downstream_loss;
use csipos::train::pretrain::{pretrain, pretrain_step, PretrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

fn pos(azimuth_deg: f64, distance_m: f64) -> PolarPosition {
    PolarPosition {
        azimuth_deg,
        distance_m,
    }
}

#[test]
fn pretrain_matches_manual_loop() {
    let cfg = common::miniature_config();
    let data = ExperimentData::generate(&cfg).unwrap();
    let grid = AngularGrid::new(cfg.scene.df_range_deg, 6).unwrap();
    let set = PretrainSet::from_dataset(&data.pretrain, &grid).unwrap();
    let pcfg = PretrainConfig {
        iterations: 7,
        batch_size: set.len(),
        bins: 6,
        lr_decay: 0.5,
        decay_every: 3,
        ..cfg.pretrain.clone()
    };
    let mut rng = run_rng(3, STREAM_PRETRAIN, 6, 0);
    let scale = magnitude_scale(&data.pretrain.snapshots);
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, scale, &mut rng).unwrap();
    let mut head = new_angular_head(&cfg.model, 6, &mut rng);
    let (mut enc_manual, mut head_manual) = (encoder.clone(), head.clone());

    let losses = pretrain(&mut encoder, &mut head, &set, &pcfg, &mut rng).unwrap();

    let all: Vec<usize> = (0..set.len()).collect();
    let (x, segs, targets) = set.batch(&all).unwrap();
    let lr_e = StepDecay::new(pcfg.lr_encoder, 0.5, 3);
    let lr_f = StepDecay::new(pcfg.lr_fn1, 0.5, 3);
    for (it, &expected) in losses.iter().enumerate() {
        let loss = pretrain_step(&mut enc_manual, &mut head_manual, &x, &segs, &targets).unwrap();
        assert_eq!(loss.to_bits(), expected.to_bits(), "iteration {it}");
        sgd_step(&mut enc_manual, lr_e.at(it));
        sgd_step(&mut head_manual, lr_f.at(it));
    }
    assert_eq!(
        Checkpoint::capture(0, &[&encoder, &head]).to_bytes(),
        Checkpoint::capture(0, &[&enc_manual, &head_manual]).to_bytes()
    );
}

#[test]
fn downstream_matches_manual_loop() {
    let mut cfg = common::miniature_config();
    cfg.downstream.epochs = 5;
    cfg.downstream.decay_every = 2;
    let data = ExperimentData::generate(&cfg).unwrap();
    let train = LabeledSet::from_dataset(&data.labeled).unwrap();
    let mut rng = run_rng(4, 9, 0, train.len());
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, 1.0, &mut rng).unwrap();
    let mut head = new_polar_head(&cfg.model, &cfg.scene, &mut rng);
    let (mut enc_manual, mut head_manual) = (encoder.clone(), head.clone());
    let mut rng_manual = rng.clone();

    let outcome = downstream_train(&mut encoder, &mut head, &train, None, &cfg.downstream, true, &mut rng).unwrap();
    assert!(outcome.validation.is_empty() && outcome.best.is_none());

    let d = &cfg.downstream;
    let lr_e = StepDecay::new(d.lr_encoder, d.lr_decay, d.decay_every);
    let lr_f = StepDecay::new(d.lr_fn2, d.lr_decay, d.decay_every);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..d.epochs {
        order.shuffle(&mut rng_manual);
        let mut total = 0.0;
        for chunk in order.chunks(d.batch_size) {
            let (x, truth) = train.batch(chunk).unwrap();
            total += downstream_step(&mut enc_manual, &mut head_manual, &x, &truth).unwrap() * chunk.len() as f64;
            sgd_step(&mut enc_manual, lr_e.at(epoch));
            sgd_step(&mut head_manual, lr_f.at(epoch));
        }
        let mean = total / train.len() as f64;
        assert_eq!(mean.to_bits(), outcome.epoch_losses[epoch].to_bits(), "epoch {epoch}");
    }
    assert_eq!(
        Checkpoint::capture(0, &[&encoder, &head]).to_bytes(),
        Checkpoint::capture(0, &[&enc_manual, &head_manual]).to_bytes()
    );
}

#[test]
fn pretraining_repeats_bit_for_bit() {
    let cfg = common::miniature_config();
    let data = ExperimentData::generate(&cfg).unwrap();
    let validation = LabeledSet::from_dataset(&data.validation).unwrap();
    let (ea, ha, ra) = pretrain_run(&cfg, &data.pretrain, &validation, 6, 5).unwrap();
    let (eb, hb, rb) = pretrain_run(&cfg, &data.pretrain, &validation, 6, 5).unwrap();
    assert_eq!(
        Checkpoint::capture(0, &[&ea, &ha]).to_bytes(),
        Checkpoint::capture(0, &[&eb, &hb]).to_bytes()
    );
    assert!(ra.losses.iter().zip(&rb.losses).all(|(a, b)| a.to_bits() == b.to_bits()));
    let (ec, hc, _) = pretrain_run(&cfg, &data.pretrain, &validation, 6, 6).unwrap();
    assert_ne!(
        Checkpoint::capture(0, &[&ea, &ha]).to_bytes(),
        Checkpoint::capture(0, &[&ec, &hc]).to_bytes()
    );
}

#[test]
fn pretraining_loss_falls() {
    let mut cfg = common::miniature_config();
    cfg.pretrain.iterations = 120;
    let data = ExperimentData::generate(&cfg).unwrap();
    let validation = LabeledSet::from_dataset(&data.validation).unwrap();
    let (_, _, run) = pretrain_run(&cfg, &data.pretrain, &validation, 6, 1).unwrap();
    let window = 20;
    let head: f64 = run.losses[..window].iter().sum::<f64>() / window as f64;
    let tail: f64 = run.losses[run.losses.len() - window..].iter().sum::<f64>() / window as f64;
    assert!(tail < head, "first {window} mean {head}, last {window} mean {tail}");
}

#[test]
fn metrics_match_cartesian_oracle() {
    let mut rng = common::rng(21);
    let truth: Vec<PolarPosition> = (0..10)
        .map(|_| pos(rng.gen_range(0.0..180.0), rng.gen_range(1.0..40.0)))
        .collect();
    let predicted: Vec<PolarPosition> = (0..10)
        .map(|_| pos(rng.gen_range(0.0..180.0), rng.gen_range(0.0..40.0)))
        .collect();
    let report = EvalReport::from_predictions(&truth, &predicted);
    let xy = |p: &PolarPosition| {
        let rad = p.azimuth_deg * PI / 180.0;
        (p.distance_m * rad.cos(), p.distance_m * rad.sin())
    };
    let mut mpe = 0.0;
    let mut mae_az = 0.0;
    let mut mae_d = 0.0;
    for (t, p) in truth.iter().zip(&predicted) {
        let ((tx, ty), (px, py)) = (xy(t), xy(p));
        mpe += ((tx - px).powi(2) + (ty - py).powi(2)).sqrt() / 10.0;
        mae_az += (t.azimuth_deg - p.azimuth_deg).abs() / 10.0;
        mae_d += (t.distance_m - p.distance_m).abs() / 10.0;
    }
    assert!((report.mean_positioning_error - mpe).abs() < 1e-9);
    assert!((report.mae_azimuth - mae_az).abs() < 1e-9);
    assert!((report.mae_distance - mae_d).abs() < 1e-9);
    assert!(report.azimuth_error_cdf.windows(2).all(|w| w[0] <= w[1]));

    let perfect = EvalReport::from_predictions(&truth, &truth);
    assert_eq!(perfect.mean_positioning_error, 0.0);
    let pushed: Vec<PolarPosition> = truth.iter().map(|t| pos(t.azimuth_deg, t.distance_m + 1.0)).collect();
    let radial = EvalReport::from_predictions(&truth, &pushed);
    assert!((radial.mean_positioning_error - 1.0).abs() < 1e-9);
    assert!((radial.mae_distance - 1.0).abs() < 1e-12);
    assert_eq!(radial.mae_azimuth, 0.0);
}

#[test]
fn bin_errors_count_whole_bins() {
    let grid = AngularGrid::new(180.0, 30).unwrap();
    // Bins are one-based.
    let one_hot = |k: usize| {
        let mut v = vec![0.0; 30];
        v[k - 1] = 1.0;
        AngularDistribution(v)
    };
    // 45° lies in bin 8 (ceil(45 / 6)).
    let truth = [pos(45.0, 10.0), pos(45.0, 10.0), pos(45.0, 10.0)];
    let errors = bin_errors(&grid, &truth, &[one_hot(8), one_hot(9), one_hot(5)]);
    assert_eq!(errors, vec![0.0, 6.0, 18.0]);
}

#[test]
fn downstream_loss_oracle_and_gradient() {
    let mut rng = common::rng(8);
    let pred: Vec<f64> = (0..8)
        .flat_map(|_| [rng.gen_range(0.0..180.0), rng.gen_range(0.0..40.0)])
        .collect();
    let truth: Vec<[f64; 2]> = (0..4).map(|_| [rng.gen_range(-40.0..40.0), rng.gen_range(0.0..40.0)]).collect();
    assert!(downstream_loss(&pred, &truth).is_err());
    let pred = &pred[..8];
    let (loss, grad) = downstream_loss(pred, &truth).unwrap();
    let oracle = |p: &[f64]| {
        p.chunks(2)
            .zip(&truth)
            .map(|(q, t)| {
                let rad = q[0] * PI / 180.0;
                (t[0] - q[1] * rad.cos()).powi(2) + (t[1] - q[1] * rad.sin()).powi(2)
            })
            .sum::<f64>()
            / (2.0 * truth.len() as f64)
    };
    assert!((loss - oracle(pred)).abs() < 1e-12 * loss.max(1.0));
    for i in 0..pred.len() {
        let h = 1e-6;
        let mut up = pred.to_vec();
        let mut down = pred.to_vec();
        up[i] += h;
        down[i] -= h;
        let numeric = (oracle(&up) - oracle(&down)) / (2.0 * h);
        assert!((numeric - grad[i]).abs() < 1e-6 * numeric.abs().max(1.0), "entry {i}");
    }
}

#[test]
fn non_finite_loss_aborts() {
    let cfg = common::miniature_config();
    let data = ExperimentData::generate(&cfg).unwrap();
    let train = LabeledSet::from_dataset(&data.labeled).unwrap();
    let mut rng = run_rng(1, 9, 0, 0);
    let mut encoder = new_encoder(&cfg.model, &cfg.scene, 1.0, &mut rng).unwrap();
    let mut head = new_polar_head(&cfg.model, &cfg.scene, &mut rng);
    head.params_mut()[0].value[0] = f64::NAN;
    let err = downstream_train(&mut encoder, &mut head, &train, None, &cfg.downstream, true, &mut rng).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn pretrain_cdf_matches_golden() {
    let cfg = common::miniature_config();
    let data = ExperimentData::generate(&cfg).unwrap();
    let validation = LabeledSet::from_dataset(&data.validation).unwrap();
    let (_, _, run) = pretrain_run(&cfg, &data.pretrain, &validation, 15, 1).unwrap();
    let text: String = run.azimuth_errors.iter().map(|e| format!("{e:.12}\n")).collect();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/pretrain_cdf_k15_seed1.txt");
    if std::env::var_os("CSIPOS_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file; rerun with CSIPOS_BLESS=1 to create it");
    assert_eq!(text, golden);
}
