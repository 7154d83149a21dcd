//! Synthetic street scene: vehicle traffic, multipath channels toward a
//! base-station ULA, and camera detections.
//!
//! The base station sits at the origin facing `+y`; azimuth is measured
//! from the `+x` axis, so the street in front of it spans `[0°, 180°]`.
//! Vehicles drive along straight lanes parallel to the `x` axis and wrap
//! around when they leave the coverage radius. A snapshot is a pure
//! function of `(seed, time index)`, so splits can be produced in any order.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csi::ComplexCsiMatrix;
use crate::error::{Error, Result};
use crate::geometry::{
    clamp_azimuth, direction_to_pixel, pixel_to_direction, CameraModel, CameraRig, PixelCoord,
    PolarDirection,
};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const FLEET_STREAM: u64 = u64::MAX;

/// Scene and sensing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub df_range_deg: f64,
    pub max_range_m: f64,
    /// Served vehicles per slot, inclusive.
    pub vehicle_count_range: [usize; 2],
    /// Multipath components per channel, inclusive.
    pub path_count_range: [usize; 2],
    pub nlos_probability: f64,
    pub detection_miss_prob: f64,
    pub detection_angle_noise_deg: f64,
    /// LS estimation SNR; `inf` disables estimation noise.
    pub csi_noise_snr_db: f64,
    pub seed: u64,
    /// Lateral offsets of the lanes from the base station.
    pub lane_offsets_m: Vec<f64>,
    /// Building facade behind the far lane that produces a specular reflection.
    pub wall_offset_m: f64,
    pub wall_reflection: f64,
    pub fleet_size: usize,
    pub speed_range_mps: [f64; 2],
    pub slot_interval_s: f64,
    /// Keep one slot out of every `time_stride`.
    pub time_stride: usize,
    pub camera_height_m: f64,
    /// Log-normal shadowing on the direct path.
    pub shadowing_db: f64,
    /// Probability of one spurious detection per slot.
    pub false_detection_prob: f64,
    /// Round detections to integer pixels before back-projection.
    pub quantize_pixels: bool,
    pub cameras: Vec<CameraModel>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let camera = |az: f64| CameraModel {
            los_azimuth_deg: az,
            los_elevation_deg: -20.0,
            horiz_view_deg: 60.0,
            vert_view_deg: 60.0,
            pixel_width: 1280,
            pixel_height: 720,
        };
        Self {
            num_antennas: 16,
            num_subcarriers: 52,
            carrier_freq_hz: 28e9,
            bandwidth_hz: 0.2e9,
            df_range_deg: 180.0,
            max_range_m: 40.0,
            vehicle_count_range: [1, 5],
            path_count_range: [2, 4],
            nlos_probability: 0.2,
            detection_miss_prob: 0.05,
            detection_angle_noise_deg: 1.0,
            csi_noise_snr_db: 20.0,
            seed: 1,
            lane_offsets_m: vec![6.0, 10.0, 14.0, 18.0],
            wall_offset_m: 24.0,
            wall_reflection: 0.5,
            fleet_size: 12,
            speed_range_mps: [5.0, 15.0],
            slot_interval_s: 0.1,
            time_stride: 4,
            camera_height_m: 6.0,
            shadowing_db: 1.0,
            false_detection_prob: 0.0,
            quantize_pixels: true,
            cameras: vec![camera(30.0), camera(90.0), camera(150.0)],
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.num_antennas >= 2, || format!("num_antennas must be ≥ 2, got {}", self.num_antennas))?;
        check(self.num_subcarriers >= 1, || "num_subcarriers must be ≥ 1".into())?;
        // Lanes run across the full half plane in front of the array, so a
        // narrower range could leave a slot with nobody to serve.
        check(self.df_range_deg >= 180.0 && self.df_range_deg <= 360.0, || {
            format!("df_range_deg must lie in [180, 360], got {}", self.df_range_deg)
        })?;
        check(self.max_range_m > 0.0, || "max_range_m must be positive".into())?;
        check(self.carrier_freq_hz > 0.0 && self.bandwidth_hz > 0.0, || {
            "carrier frequency and bandwidth must be positive".into()
        })?;
        for (name, p) in [
            ("nlos_probability", self.nlos_probability),
            ("detection_miss_prob", self.detection_miss_prob),
            ("false_detection_prob", self.false_detection_prob),
            ("wall_reflection", self.wall_reflection),
        ] {
            check(is_prob(p), || format!("{name} must lie in [0, 1], got {p}"))?;
        }
        let [vmin, vmax] = self.vehicle_count_range;
        check(vmin >= 1 && vmin <= vmax, || {
            format!("vehicle_count_range must satisfy 1 ≤ min ≤ max, got {vmin}..{vmax}")
        })?;
        check(vmax <= self.fleet_size, || {
            format!("fleet_size {} is smaller than the maximum vehicle count {vmax}", self.fleet_size)
        })?;
        let [pmin, pmax] = self.path_count_range;
        check(pmin >= 1 && pmin <= pmax, || {
            format!("path_count_range must satisfy 1 ≤ min ≤ max, got {pmin}..{pmax}")
        })?;
        // TOML integers are signed 64-bit and the scene is echoed as TOML.
        check(i64::try_from(self.seed).is_ok(), || format!("seed {} exceeds {}", self.seed, i64::MAX))?;
        check(self.detection_angle_noise_deg >= 0.0, || "detection noise must be non-negative".into())?;
        check(!self.csi_noise_snr_db.is_nan(), || "csi_noise_snr_db must be a number".into())?;
        check(!self.lane_offsets_m.is_empty(), || "at least one lane is required".into())?;
        for &y in &self.lane_offsets_m {
            check(y > 0.0 && y < self.max_range_m, || {
                format!("lane offset {y} must lie in (0, max_range_m)")
            })?;
            check(y < self.wall_offset_m, || format!("lane offset {y} lies beyond the wall"))?;
        }
        let [smin, smax] = self.speed_range_mps;
        check(smin >= 0.0 && smin <= smax, || "speed_range_mps must be ordered and non-negative".into())?;
        check(self.slot_interval_s > 0.0 && self.time_stride >= 1, || {
            "slot interval must be positive and time_stride ≥ 1".into()
        })?;
        check(self.shadowing_db >= 0.0, || "shadowing_db must be non-negative".into())?;
        CameraRig::new(self.cameras.clone())?;
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.num_subcarriers as f64
    }

    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::new(self.cameras.clone())
    }
}

/// Horizontal polar position `(ψ, d_xoy)` relative to the base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPosition {
    pub azimuth_deg: f64,
    pub distance_m: f64,
}

impl PolarPosition {
    pub fn from_xy(x: f64, y: f64) -> Self {
        Self {
            azimuth_deg: y.atan2(x).to_degrees(),
            distance_m: x.hypot(y),
        }
    }

    /// Rectangular coordinates `(d cos ψ, d sin ψ)`.
    pub fn to_xy(self) -> [f64; 2] {
        let a = self.azimuth_deg / 180.0 * PI;
        [self.distance_m * a.cos(), self.distance_m * a.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: PolarPosition,
    /// Signed speed along the street.
    pub velocity_mps: f64,
}

/// One propagation path seen at the base-station array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub azimuth_deg: f64,
    pub gain: Complex64,
    pub delay_s: f64,
}

/// Half-wavelength ULA response toward `azimuth_deg`:
/// antenna `n` has phase `−π n cos ψ`.
pub fn steering_vector(num_antennas: usize, azimuth_deg: f64) -> Vec<Complex64> {
    let c = (azimuth_deg / 180.0 * PI).cos();
    (0..num_antennas)
        .map(|n| Complex64::from_polar(1.0, -PI * n as f64 * c))
        .collect()
}

/// Noise-free channel as the superposition of `paths`, each a steering
/// vector times a per-subcarrier delay ramp centered on the carrier.
pub fn channel_from_paths(
    num_antennas: usize,
    num_subcarriers: usize,
    subcarrier_spacing_hz: f64,
    paths: &[PathComponent],
) -> ComplexCsiMatrix {
    let mut h = ComplexCsiMatrix::zeros(num_antennas, num_subcarriers);
    let mid = (num_subcarriers as f64 - 1.0) / 2.0;
    for path in paths {
        let a = steering_vector(num_antennas, path.azimuth_deg);
        let ramp: Vec<Complex64> = (0..num_subcarriers)
            .map(|k| {
                let f = (k as f64 - mid) * subcarrier_spacing_hz;
                Complex64::from_polar(1.0, -2.0 * PI * f * path.delay_s)
            })
            .collect();
        let entries = h.entries_mut();
        for (n, an) in a.iter().enumerate() {
            let g = path.gain * an;
            for (k, rk) in ramp.iter().enumerate() {
                entries[n * num_subcarriers + k] += g * rk;
            }
        }
    }
    h
}

fn free_space_gain(cfg: &SceneConfig, length_m: f64, extra_phase: f64) -> Complex64 {
    let lambda = cfg.wavelength_m();
    let amplitude = lambda / (4.0 * PI * length_m);
    Complex64::from_polar(amplitude, -2.0 * PI * length_m / lambda + extra_phase)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Propagation paths for a vehicle: the direct path (unless blocked), the
/// facade reflection, then random scatterers, truncated to a random count.
pub fn vehicle_paths<R: Rng + ?Sized>(
    cfg: &SceneConfig,
    vehicle: &VehicleState,
    rng: &mut R,
) -> Vec<PathComponent> {
    let [pmin, pmax] = cfg.path_count_range;
    let count = rng.gen_range(pmin..=pmax);
    let blocked = rng.gen::<f64>() < cfg.nlos_probability;
    let shadow = 10f64.powf(cfg.shadowing_db * gaussian(rng) / 20.0);
    let [x, y] = vehicle.position.to_xy();
    let los_len = vehicle.position.distance_m;

    let mut paths = Vec::with_capacity(count);
    if !blocked {
        paths.push(PathComponent {
            azimuth_deg: vehicle.position.azimuth_deg,
            gain: free_space_gain(cfg, los_len, 0.0) * shadow,
            delay_s: los_len / SPEED_OF_LIGHT,
        });
    }
    let image = PolarPosition::from_xy(x, 2.0 * cfg.wall_offset_m - y);
    paths.push(PathComponent {
        azimuth_deg: image.azimuth_deg,
        gain: free_space_gain(cfg, image.distance_m, PI) * cfg.wall_reflection,
        delay_s: image.distance_m / SPEED_OF_LIGHT,
    });
    while paths.len() < count {
        let excess: f64 = rng.gen_range(2.0..30.0);
        let strength: f64 = rng.gen_range(0.05..0.3);
        let length = los_len + excess;
        let phase = rng.gen_range(0.0..2.0 * PI);
        paths.push(PathComponent {
            azimuth_deg: rng.gen_range(0.0..=cfg.df_range_deg),
            gain: free_space_gain(cfg, length, phase) * strength,
            delay_s: length / SPEED_OF_LIGHT,
        });
    }
    paths.truncate(count);
    paths
}

/// Adds circular complex Gaussian noise at `snr_db` relative to the mean
/// entry power of `h`.
pub fn add_estimation_noise<R: Rng + ?Sized>(h: &mut ComplexCsiMatrix, snr_db: f64, rng: &mut R) {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return;
    }
    let n = h.entries().len() as f64;
    let power = h.frobenius_sq() / n;
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    for e in h.entries_mut() {
        *e += Complex64::new(sigma * gaussian(rng), sigma * gaussian(rng));
    }
}

pub fn simulate_channel<R: Rng + ?Sized>(
    cfg: &SceneConfig,
    vehicle: &VehicleState,
    rng: &mut R,
) -> ComplexCsiMatrix {
    let paths = vehicle_paths(cfg, vehicle, rng);
    let mut h = channel_from_paths(
        cfg.num_antennas,
        cfg.num_subcarriers,
        cfg.subcarrier_spacing_hz(),
        &paths,
    );
    add_estimation_noise(&mut h, cfg.csi_noise_snr_db, rng);
    h
}

/// Image-derived azimuths of the given vehicles, in shuffled order.
///
/// Each vehicle inside some camera's field of view is detected with
/// probability `1 − detection_miss_prob`. Its azimuth is perturbed by
/// Gaussian noise, projected onto that camera's pixel plane (rounded to
/// whole pixels when `quantize_pixels` is set) and mapped back.
pub fn simulate_detections<R: Rng + ?Sized>(
    cfg: &SceneConfig,
    rig: &CameraRig,
    vehicles: &[VehicleState],
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(vehicles.len() + 1);
    for v in vehicles {
        let missed = rng.gen::<f64>() < cfg.detection_miss_prob;
        let noise = cfg.detection_angle_noise_deg * gaussian(rng);
        let Some(ci) = rig.camera_for_azimuth(v.position.azimuth_deg) else {
            continue;
        };
        if missed {
            continue;
        }
        let cam = &rig.cameras()[ci];
        let elevation = -(cfg.camera_height_m / v.position.distance_m).atan().to_degrees();
        if let Some(az) = observe(cfg, cam, v.position.azimuth_deg + noise, elevation) {
            out.push(az);
        }
    }
    if cfg.false_detection_prob > 0.0 && rng.gen::<f64>() < cfg.false_detection_prob {
        let az = rng.gen_range(0.0..=cfg.df_range_deg);
        if let Some(ci) = rig.camera_for_azimuth(az) {
            if let Some(az) = observe(cfg, &rig.cameras()[ci], az, rig.cameras()[ci].los_elevation_deg) {
                out.push(az);
            }
        }
    }
    out.shuffle(rng);
    out
}

fn observe(cfg: &SceneConfig, cam: &CameraModel, azimuth_deg: f64, elevation_deg: f64) -> Option<f64> {
    let (lo, hi) = cam.azimuth_span();
    let half_v = cam.vert_view_deg / 2.0;
    let dir = PolarDirection {
        azimuth_deg: azimuth_deg.clamp(lo, hi),
        elevation_deg: elevation_deg.clamp(cam.los_elevation_deg - half_v, cam.los_elevation_deg + half_v),
    };
    let azimuth = if cfg.quantize_pixels {
        let p = direction_to_pixel(cam, dir).ok()?;
        let q = PixelCoord {
            u: p.u.round(),
            v: p.v.round(),
        };
        pixel_to_direction(cam, q).ok()?.azimuth_deg
    } else {
        dir.azimuth_deg
    };
    Some(clamp_azimuth(azimuth, cfg.df_range_deg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FleetVehicle {
    lane_y: f64,
    half_span: f64,
    start_x: f64,
    velocity: f64,
}

fn fleet(cfg: &SceneConfig) -> Vec<FleetVehicle> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(FLEET_STREAM);
    (0..cfg.fleet_size)
        .map(|i| {
            let lane_y = cfg.lane_offsets_m[i % cfg.lane_offsets_m.len()];
            let half_span = (cfg.max_range_m * cfg.max_range_m - lane_y * lane_y).sqrt();
            let [smin, smax] = cfg.speed_range_mps;
            let speed = if smax > smin { rng.gen_range(smin..=smax) } else { smin };
            let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
            FleetVehicle {
                lane_y,
                half_span,
                start_x: rng.gen_range(-half_span..half_span),
                velocity: dir * speed,
            }
        })
        .collect()
}

fn fleet_state(cfg: &SceneConfig, v: &FleetVehicle, time_index: u64) -> VehicleState {
    let elapsed = time_index as f64 * cfg.time_stride as f64 * cfg.slot_interval_s;
    let span = 2.0 * v.half_span;
    let x = (v.start_x + v.velocity * elapsed + v.half_span).rem_euclid(span) - v.half_span;
    VehicleState {
        position: PolarPosition::from_xy(x, v.lane_y),
        velocity_mps: v.velocity,
    }
}

/// Everything the base station gathers in one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time_index: u64,
    pub csi: Vec<ComplexCsiMatrix>,
    /// Azimuths from the cameras, with no correspondence to `csi`.
    pub detected_azimuths: Vec<f64>,
    /// Ground truth aligned with `csi`; present only in labeled splits.
    pub truth_positions: Option<Vec<PolarPosition>>,
}

/// Which dataset a file or collection of snapshots represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Pretrain,
    Labeled,
    Validation,
}

impl SplitKind {
    pub fn code(self) -> u8 {
        match self {
            SplitKind::Pretrain => 0,
            SplitKind::Labeled => 1,
            SplitKind::Validation => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitKind::Pretrain),
            1 => Some(SplitKind::Labeled),
            2 => Some(SplitKind::Validation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Pretrain => "pretrain",
            SplitKind::Labeled => "labeled",
            SplitKind::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: SplitKind,
    pub scene: SceneConfig,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub pretrain: usize,
    pub labeled: usize,
    pub validation: usize,
}

/// Deterministic simulator bound to one validated [`SceneConfig`].
#[derive(Debug, Clone)]
pub struct SceneSimulator {
    cfg: SceneConfig,
    rig: CameraRig,
    fleet: Vec<FleetVehicle>,
}

impl SceneSimulator {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let rig = cfg.rig()?;
        let fleet = fleet(&cfg);
        Ok(Self { cfg, rig, fleet })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    fn slot_rng(&self, time_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(time_index);
        rng
    }

    /// Vehicles served at `time_index`, in service order.
    pub fn served_vehicles<R: Rng + ?Sized>(&self, time_index: u64, rng: &mut R) -> Vec<VehicleState> {
        let mut eligible: Vec<VehicleState> = self
            .fleet
            .iter()
            .map(|v| fleet_state(&self.cfg, v, time_index))
            .filter(|s| {
                let p = s.position;
                p.azimuth_deg >= 0.0
                    && p.azimuth_deg <= self.cfg.df_range_deg
                    && p.distance_m > 0.0
                    && p.distance_m <= self.cfg.max_range_m
            })
            .collect();
        let [vmin, vmax] = self.cfg.vehicle_count_range;
        let hi = vmax.min(eligible.len());
        let lo = vmin.min(hi);
        let count = rng.gen_range(lo..=hi);
        eligible.partial_shuffle(rng, count);
        eligible.truncate(count);
        eligible
    }

    /// Full multi-vehicle snapshot with detections.
    pub fn snapshot(&self, time_index: u64) -> Snapshot {
        let mut rng = self.slot_rng(time_index);
        let vehicles = self.served_vehicles(time_index, &mut rng);
        let csi = vehicles
            .iter()
            .map(|v| simulate_channel(&self.cfg, v, &mut rng))
            .collect();
        let detected_azimuths = simulate_detections(&self.cfg, &self.rig, &vehicles, &mut rng);
        Snapshot {
            time_index,
            csi,
            detected_azimuths,
            truth_positions: Some(vehicles.iter().map(|v| v.position).collect()),
        }
    }

    /// Single-vehicle labeled sample drawn from the slot at `time_index`.
    pub fn labeled_sample(&self, time_index: u64) -> Snapshot {
        let mut rng = self.slot_rng(time_index);
        let vehicles = self.served_vehicles(time_index, &mut rng);
        let v = vehicles[0];
        Snapshot {
            time_index,
            csi: vec![simulate_channel(&self.cfg, &v, &mut rng)],
            detected_azimuths: Vec::new(),
            truth_positions: Some(vec![v.position]),
        }
    }

    /// Pretraining, labeled and validation splits over disjoint, consecutive
    /// time indices.
    pub fn generate(&self, sizes: SplitSizes) -> (Dataset, Dataset, Dataset) {
        let p = sizes.pretrain as u64;
        let l = sizes.labeled as u64;
        let v = sizes.validation as u64;
        let pretrain = (0..p)
            .map(|t| Snapshot {
                truth_positions: None,
                ..self.snapshot(t)
            })
            .collect();
        let labeled = (p..p + l).map(|t| self.labeled_sample(t)).collect();
        let validation = (p + l..p + l + v).map(|t| self.labeled_sample(t)).collect();
        let wrap = |kind, snapshots| Dataset {
            kind,
            scene: self.cfg.clone(),
            snapshots,
        };
        (
            wrap(SplitKind::Pretrain, pretrain),
            wrap(SplitKind::Labeled, labeled),
            wrap(SplitKind::Validation, validation),
        )
    }
}

/// Convenience wrapper over [`SceneSimulator::generate`].
pub fn generate_datasets(cfg: &SceneConfig, sizes: SplitSizes) -> Result<(Dataset, Dataset, Dataset)> {
    Ok(SceneSimulator::new(cfg.clone())?.generate(sizes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            num_antennas: 8,
            num_subcarriers: 16,
            ..SceneConfig::default()
        }
    }

    fn vehicle(az: f64, d: f64) -> VehicleState {
        VehicleState {
            position: PolarPosition {
                azimuth_deg: az,
                distance_m: d,
            },
            velocity_mps: 0.0,
        }
    }

    fn unit_path(az: f64) -> PathComponent {
        PathComponent {
            azimuth_deg: az,
            gain: Complex64::new(1.0, 0.0),
            delay_s: 0.0,
        }
    }

    #[test]
    fn broadside_is_in_phase() {
        let h = channel_from_paths(8, 4, 1e6, &[unit_path(90.0)]);
        for n in 0..8 {
            for k in 0..4 {
                let e = h.get(n, k);
                assert!((e - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn steering_matches_closed_form() {
        for &az in &[10.0, 47.0, 90.0, 133.3, 179.0] {
            let h = channel_from_paths(6, 3, 1e6, &[unit_path(az)]);
            for n in 0..6 {
                let phase = -PI * n as f64 * (az * PI / 180.0).cos();
                let expected = Complex64::new(phase.cos(), phase.sin());
                for k in 0..3 {
                    assert!((h.get(n, k) - expected).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_path_is_rank_one() {
        let path = PathComponent {
            azimuth_deg: 70.0,
            gain: Complex64::new(0.3, -0.2),
            delay_s: 37e-9,
        };
        let h = channel_from_paths(5, 6, 3.8e6, &[path]);
        // Every 2x2 minor vanishes.
        for n in 1..5 {
            for k in 1..6 {
                let minor = h.get(0, 0) * h.get(n, k) - h.get(0, k) * h.get(n, 0);
                assert!(minor.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn superposition_and_energy_scaling() {
        let a = PathComponent {
            azimuth_deg: 40.0,
            gain: Complex64::new(0.5, 0.1),
            delay_s: 20e-9,
        };
        let b = PathComponent {
            azimuth_deg: 120.0,
            gain: Complex64::new(-0.2, 0.3),
            delay_s: 55e-9,
        };
        let ha = channel_from_paths(4, 5, 4e6, &[a]);
        let hb = channel_from_paths(4, 5, 4e6, &[b]);
        let hab = channel_from_paths(4, 5, 4e6, &[a, b]);
        for i in 0..20 {
            assert!((hab.entries()[i] - ha.entries()[i] - hb.entries()[i]).norm() < 1e-12);
        }
        let doubled = [
            PathComponent { gain: a.gain * 2.0, ..a },
            PathComponent { gain: b.gain * 2.0, ..b },
        ];
        let h2 = channel_from_paths(4, 5, 4e6, &doubled);
        assert!((h2.frobenius_sq() / hab.frobenius_sq() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn simulated_channel_shape_and_finiteness() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = simulate_channel(&cfg, &vehicle(60.0, 20.0), &mut rng);
        assert_eq!((h.num_antennas(), h.num_subcarriers()), (8, 16));
        assert!(h.entries().iter().all(|e| e.re.is_finite() && e.im.is_finite()));
    }

    #[test]
    fn noiseless_detections_within_a_pixel() {
        let cfg = SceneConfig {
            detection_miss_prob: 0.0,
            detection_angle_noise_deg: 0.0,
            ..small()
        };
        let rig = cfg.rig().unwrap();
        let truth = [25.0, 91.0, 140.0];
        let vehicles: Vec<_> = truth.iter().map(|&a| vehicle(a, 15.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut det = simulate_detections(&cfg, &rig, &vehicles, &mut rng);
        det.sort_by(f64::total_cmp);
        assert_eq!(det.len(), 3);
        let pixel_deg = cfg.cameras[0].center_pixel_width_deg();
        for (d, t) in det.iter().zip(truth) {
            assert!((d - t).abs() <= pixel_deg, "{d} vs {t}");
        }
    }

    #[test]
    fn missed_and_uncovered_vehicles_dropped() {
        let cfg = SceneConfig {
            detection_miss_prob: 1.0,
            ..small()
        };
        let rig = cfg.rig().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vehicles = [vehicle(30.0, 10.0), vehicle(100.0, 12.0)];
        assert!(simulate_detections(&cfg, &rig, &vehicles, &mut rng).is_empty());

        let narrow = SceneConfig {
            detection_miss_prob: 0.0,
            cameras: vec![cfg.cameras[1]],
            ..small()
        };
        let rig = narrow.rig().unwrap();
        let det = simulate_detections(&narrow, &rig, &[vehicle(20.0, 10.0), vehicle(95.0, 10.0)], &mut rng);
        assert_eq!(det.len(), 1);
        assert!((det[0] - 95.0).abs() < 5.0);
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let cfg = small();
        let sizes = SplitSizes {
            pretrain: 10,
            labeled: 5,
            validation: 5,
        };
        let (p, l, v) = generate_datasets(&cfg, sizes).unwrap();
        let mut times: Vec<u64> = p
            .snapshots
            .iter()
            .chain(&l.snapshots)
            .chain(&v.snapshots)
            .map(|s| s.time_index)
            .collect();
        times.sort_unstable();
        times.dedup();
        assert_eq!(times.len(), 20);
        let again = generate_datasets(&cfg, sizes).unwrap();
        assert_eq!((p.clone(), l.clone(), v.clone()), again);
        for s in &p.snapshots {
            assert!((1..=5).contains(&s.csi.len()));
            assert!(s.truth_positions.is_none());
            assert!(s.detected_azimuths.iter().all(|a| (0.0..=180.0).contains(a)));
        }
        for s in l.snapshots.iter().chain(&v.snapshots) {
            assert_eq!(s.csi.len(), 1);
            assert_eq!(s.truth_positions.as_ref().unwrap().len(), 1);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small();
        cfg.num_antennas = 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.nlos_probability = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.vehicle_count_range = [0, 3];
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.cameras[1].los_azimuth_deg = 70.0;
        assert!(matches!(cfg.validate(), Err(Error::OverlappingCameras { .. })));
        assert!(small().validate().is_ok());
    }

    #[test]
    fn polar_rect_round_trip() {
        let p = PolarPosition { azimuth_deg: 0.0, distance_m: 10.0 };
        let [x, y] = p.to_xy();
        assert!((x - 10.0).abs() < 1e-12 && y.abs() < 1e-12);
        let p = PolarPosition { azimuth_deg: 90.0, distance_m: 10.0 };
        let [x, y] = p.to_xy();
        assert!(x.abs() < 1e-12 && (y - 10.0).abs() < 1e-12);
        let q = PolarPosition::from_xy(-3.0, 4.0);
        assert!((q.distance_m - 5.0).abs() < 1e-12);
        let [x, y] = q.to_xy();
        assert!((x + 3.0).abs() < 1e-12 && (y - 4.0).abs() < 1e-12);
    }
}
