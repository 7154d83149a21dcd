mod common;

use std::f64::consts::PI;

use csipos::csi::{to_tensor, ComplexCsiMatrix};
use csipos::geometry::{direction_to_pixel, pixel_to_direction, CameraModel, PixelCoord, PolarDirection};
use csipos::io::dataset::{decode_dataset, encode_dataset};
use csipos::labels::{gaussian_vector, label_snapshot, nor_fuse, AngularDistribution, AngularGrid};
use csipos::train::loss::pretrain_loss;
use num_complex::Complex64;
use proptest::prelude::*;

fn camera() -> impl Strategy<Value = CameraModel> {
    (-180.0..360.0f64, -60.0..60.0f64, 1.0..170.0f64, 1.0..170.0f64, 1u32..4000, 1u32..4000).prop_map(
        |(az, el, h, v, w, ht)| CameraModel {
            los_azimuth_deg: az,
            los_elevation_deg: el,
            horiz_view_deg: h,
            vert_view_deg: v,
            pixel_width: w,
            pixel_height: ht,
        },
    )
}

fn csi_matrix() -> impl Strategy<Value = ComplexCsiMatrix> {
    (2usize..6, 1usize..6).prop_flat_map(|(nb, nc)| {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), nb * nc).prop_map(move |v| {
            let entries = v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect();
            ComplexCsiMatrix::from_entries(nb, nc, entries).unwrap()
        })
    })
}

fn distribution(bins: usize) -> impl Strategy<Value = AngularDistribution> {
    prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], bins).prop_map(AngularDistribution)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn pixel_direction_round_trip(cam in camera(), fu in -0.9999..0.9999f64, fv in -0.9999..0.9999f64) {
        let d = PolarDirection {
            azimuth_deg: cam.los_azimuth_deg + fu * cam.horiz_view_deg / 2.0,
            elevation_deg: cam.los_elevation_deg + fv * cam.vert_view_deg / 2.0,
        };
        let p = direction_to_pixel(&cam, d).unwrap();
        prop_assert!(p.u >= 0.0 && p.u <= f64::from(cam.pixel_width));
        prop_assert!(p.v >= 0.0 && p.v <= f64::from(cam.pixel_height));
        let back = pixel_to_direction(&cam, p).unwrap();
        prop_assert!((back.azimuth_deg - d.azimuth_deg).abs() < 1e-9);
        prop_assert!((back.elevation_deg - d.elevation_deg).abs() < 1e-9);
    }

    #[test]
    fn azimuth_increases_with_column(cam in camera(), a in 0.0..1.0f64, b in 0.0..1.0f64, fv in 0.0..=1.0f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let w = f64::from(cam.pixel_width);
        let v = fv * f64::from(cam.pixel_height);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let left = pixel_to_direction(&cam, PixelCoord { u: lo * w, v }).unwrap();
        let right = pixel_to_direction(&cam, PixelCoord { u: hi * w, v }).unwrap();
        prop_assert!(right.azimuth_deg > left.azimuth_deg);
    }

    #[test]
    fn offsets_symmetric_about_center(cam in camera(), fu in 0.0..=1.0f64, fv in 0.0..=1.0f64) {
        let (w, h) = (f64::from(cam.pixel_width), f64::from(cam.pixel_height));
        let a = pixel_to_direction(&cam, PixelCoord { u: w / 2.0 * (1.0 + fu), v: h / 2.0 * (1.0 + fv) }).unwrap();
        let b = pixel_to_direction(&cam, PixelCoord { u: w / 2.0 * (1.0 - fu), v: h / 2.0 * (1.0 - fv) }).unwrap();
        // Lines of sight far from zero lose a few ulps in the offset itself.
        let tol = 1e-12 * cam.los_azimuth_deg.abs().max(cam.los_elevation_deg.abs()).max(1.0) * 4.0;
        prop_assert!(((a.azimuth_deg - cam.los_azimuth_deg) + (b.azimuth_deg - cam.los_azimuth_deg)).abs() <= tol);
        prop_assert!(((a.elevation_deg - cam.los_elevation_deg) + (b.elevation_deg - cam.los_elevation_deg)).abs() <= tol);
    }

    #[test]
    fn tensor_ignores_common_phase(h in csi_matrix(), theta in -PI..PI) {
        let rotated = h.scale(Complex64::from_polar(1.0, theta));
        let (a, b) = (to_tensor(&h), to_tensor(&rotated));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn tensor_scales_magnitude_only(h in csi_matrix(), c in 0.01..100.0f64) {
        let a = to_tensor(&h);
        let b = to_tensor(&h.scale(Complex64::new(c, 0.0)));
        let plane = h.num_antennas() * h.num_subcarriers();
        for i in 0..plane {
            prop_assert!((b.data()[i] - c * a.data()[i]).abs() <= 1e-12 * c * a.data()[i].max(1.0));
        }
        for i in plane..3 * plane {
            prop_assert!((b.data()[i] - a.data()[i]).abs() < 1e-9);
        }
        for i in 0..plane {
            let (s, co) = (a.data()[plane + i], a.data()[2 * plane + i]);
            prop_assert!((s * s + co * co - 1.0).abs() < 1e-9);
            prop_assert!(a.data()[i] >= 0.0);
        }
    }

    #[test]
    fn gaussian_vector_normalized_and_peaked(bins in 1usize..90, frac in 0.0..=1.0f64) {
        let grid = AngularGrid::new(180.0, bins).unwrap();
        let azimuth = 180.0 * frac;
        let g = gaussian_vector(&grid, azimuth).unwrap();
        prop_assert!((g.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let ratio = azimuth / grid.bin_width();
        if (ratio - ratio.round()).abs() > 1e-9 {
            prop_assert_eq!(g.peak_bin(), ratio.ceil() as usize);
            prop_assert_eq!(grid.bin_of(azimuth), ratio.ceil() as usize);
        }
    }

    #[test]
    fn noisy_or_algebra(ws in prop::collection::vec(distribution(12), 1..6), extra in distribution(12), split in 0usize..6) {
        let fused = nor_fuse(&ws).unwrap();
        let mut reversed = ws.clone();
        reversed.reverse();
        let flipped = nor_fuse(&reversed).unwrap();
        let split = split.min(ws.len());
        let nested = if split == 0 || split == ws.len() {
            fused.clone()
        } else {
            nor_fuse(&[nor_fuse(&ws[..split]).unwrap(), nor_fuse(&ws[split..]).unwrap()]).unwrap()
        };
        let mut more = ws.clone();
        more.push(extra);
        let grown = nor_fuse(&more).unwrap();
        for k in 0..12 {
            let keep: f64 = ws.iter().map(|w| 1.0 - w.0[k]).product();
            prop_assert!((0.0..=1.0).contains(&fused.0[k]));
            prop_assert!(((1.0 - fused.0[k]) - keep).abs() < 1e-12);
            prop_assert!((flipped.0[k] - fused.0[k]).abs() < 1e-12);
            prop_assert!((nested.0[k] - fused.0[k]).abs() < 1e-12);
            prop_assert!(grown.0[k] >= fused.0[k] - 1e-15);
        }
    }

    #[test]
    fn snapshot_label_order_free(mut azimuths in prop::collection::vec(0.0..=180.0f64, 0..6)) {
        let grid = AngularGrid::new(180.0, 30).unwrap();
        let a = label_snapshot(&grid, &azimuths).unwrap();
        azimuths.reverse();
        let b = label_snapshot(&grid, &azimuths).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pretrain_loss_ignores_row_order(
        rows in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 8), 1..6),
        target in distribution(8),
        rotate in 0usize..6,
    ) {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut permuted = rows.clone();
        let r = rotate % rows.len();
        permuted.rotate_left(r);
        let flat_p: Vec<f64> = permuted.iter().flatten().copied().collect();
        let segs = [0..rows.len()];
        let targets = [target];
        let (a, ga) = pretrain_loss(&flat, 8, &segs, &targets).unwrap();
        let (b, gb) = pretrain_loss(&flat_p, 8, &segs, &targets).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        // Gradients follow their rows.
        let n = rows.len();
        for m in 0..n {
            for k in 0..8 {
                prop_assert!((ga[((m + r) % n) * 8 + k] - gb[m * 8 + k]).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dataset_round_trip(seed in any::<u64>()) {
        let ds = common::random_dataset(seed);
        let bytes = encode_dataset(&ds).unwrap();
        let back = decode_dataset(&bytes, Some(&ds.scene)).unwrap();
        prop_assert!(common::bit_identical(&ds, &back));
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_dataset_rejected(seed in any::<u64>(), cut in 0.0..1.0f64) {
        let bytes = encode_dataset(&common::random_dataset(seed)).unwrap();
        let keep = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode_dataset(&bytes[..keep], None).is_err());
    }
}
