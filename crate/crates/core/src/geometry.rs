//! Camera coordinate systems and the pixel-to-polar transform.
//!
//! A camera is described by its line-of-sight direction, its horizontal
//! and vertical viewing angles, and its pixel plane size. A pixel offset
//! from the image center maps to an angular offset from the line of sight
//! through `tan(Δ) = (2u − W)/W · tan(Ω/2)`. All angles at this module's
//! boundary are in degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera mounted at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub los_azimuth_deg: f64,
    pub los_elevation_deg: f64,
    pub horiz_view_deg: f64,
    pub vert_view_deg: f64,
    pub pixel_width: u32,
    pub pixel_height: u32,
}

/// Position on the pixel plane, `0 ≤ u ≤ W`, `0 ≤ v ≤ H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

/// Azimuth/elevation direction in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarDirection {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let angles = [self.horiz_view_deg, self.vert_view_deg];
        if angles.iter().any(|a| !(a.is_finite() && *a > 0.0 && *a < 180.0)) {
            return Err(Error::Config(format!(
                "camera viewing angles must lie in (0, 180): got horizontal {} vertical {}",
                self.horiz_view_deg, self.vert_view_deg
            )));
        }
        if self.pixel_width == 0 || self.pixel_height == 0 {
            return Err(Error::Config(format!(
                "camera pixel plane must be non-empty: got {}x{}",
                self.pixel_width, self.pixel_height
            )));
        }
        if !self.los_azimuth_deg.is_finite() || !self.los_elevation_deg.is_finite() {
            return Err(Error::Config("camera line of sight must be finite".into()));
        }
        Ok(())
    }

    /// Half-open azimuth interval `[low, high)` covered by this camera.
    pub fn azimuth_span(&self) -> (f64, f64) {
        let half = self.horiz_view_deg / 2.0;
        (self.los_azimuth_deg - half, self.los_azimuth_deg + half)
    }

    pub fn contains_azimuth(&self, azimuth_deg: f64) -> bool {
        let (low, high) = self.azimuth_span();
        azimuth_deg >= low && azimuth_deg < high
    }

    /// Angular width of one pixel column at the image center, in degrees.
    pub fn center_pixel_width_deg(&self) -> f64 {
        let w = f64::from(self.pixel_width);
        let t = (self.horiz_view_deg.to_radians() / 2.0).tan();
        (2.0 / w * t).atan().to_degrees()
    }
}

/// Maps a pixel to its world direction.
pub fn pixel_to_direction(cam: &CameraModel, p: PixelCoord) -> Result<PolarDirection> {
    cam.validate()?;
    let w = f64::from(cam.pixel_width);
    let h = f64::from(cam.pixel_height);
    if !(p.u >= 0.0 && p.u <= w && p.v >= 0.0 && p.v <= h) {
        return Err(Error::PixelOutOfPlane {
            u: p.u,
            v: p.v,
            width: cam.pixel_width,
            height: cam.pixel_height,
        });
    }
    let tan_h = (cam.horiz_view_deg.to_radians() / 2.0).tan();
    let tan_v = (cam.vert_view_deg.to_radians() / 2.0).tan();
    let d_az = ((2.0 * p.u - w) / w * tan_h).atan().to_degrees();
    let d_el = ((2.0 * p.v - h) / h * tan_v).atan().to_degrees();
    Ok(PolarDirection {
        azimuth_deg: cam.los_azimuth_deg + d_az,
        elevation_deg: cam.los_elevation_deg + d_el,
    })
}

/// Inverse of [`pixel_to_direction`] for directions inside the field of view.
pub fn direction_to_pixel(cam: &CameraModel, d: PolarDirection) -> Result<PixelCoord> {
    cam.validate()?;
    let half_h = cam.horiz_view_deg / 2.0;
    let half_v = cam.vert_view_deg / 2.0;
    let d_az = d.azimuth_deg - cam.los_azimuth_deg;
    let d_el = d.elevation_deg - cam.los_elevation_deg;
    if !(d_az.abs() <= half_h && d_el.abs() <= half_v) {
        return Err(Error::NotVisible {
            azimuth_deg: d.azimuth_deg,
            elevation_deg: d.elevation_deg,
        });
    }
    let w = f64::from(cam.pixel_width);
    let h = f64::from(cam.pixel_height);
    let tan_h = half_h.to_radians().tan();
    let tan_v = half_v.to_radians().tan();
    let u = w / 2.0 * (1.0 + d_az.to_radians().tan() / tan_h);
    let v = h / 2.0 * (1.0 + d_el.to_radians().tan() / tan_v);
    Ok(PixelCoord {
        u: u.clamp(0.0, w),
        v: v.clamp(0.0, h),
    })
}

/// Ordered set of cameras with pairwise disjoint horizontal fields of view.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraModel>,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self> {
        for cam in &cameras {
            cam.validate()?;
        }
        for i in 0..cameras.len() {
            for j in i + 1..cameras.len() {
                let (a_lo, a_hi) = cameras[i].azimuth_span();
                let (b_lo, b_hi) = cameras[j].azimuth_span();
                if a_lo < b_hi && b_lo < a_hi {
                    return Err(Error::OverlappingCameras { first: i, second: j });
                }
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    /// Index of the camera whose field of view contains `azimuth_deg`.
    pub fn camera_for_azimuth(&self, azimuth_deg: f64) -> Option<usize> {
        camera_for_azimuth(&self.cameras, azimuth_deg)
    }
}

/// Index of the camera whose half-open horizontal field of view contains
/// `azimuth_deg`, if any.
pub fn camera_for_azimuth(cams: &[CameraModel], azimuth_deg: f64) -> Option<usize> {
    cams.iter().position(|c| c.contains_azimuth(azimuth_deg))
}

/// Clamps an azimuth into the direction-finding range `[0, range]`.
pub fn clamp_azimuth(azimuth_deg: f64, range_deg: f64) -> f64 {
    azimuth_deg.clamp(0.0, range_deg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel {
            los_azimuth_deg: 90.0,
            los_elevation_deg: 0.0,
            horiz_view_deg: 60.0,
            vert_view_deg: 40.0,
            pixel_width: 1280,
            pixel_height: 720,
        }
    }

    fn px(u: f64, v: f64) -> PixelCoord {
        PixelCoord { u, v }
    }

    #[test]
    fn center_maps_to_line_of_sight() {
        let d = pixel_to_direction(&cam(), px(640.0, 360.0)).unwrap();
        assert_eq!(d.azimuth_deg, 90.0);
        assert_eq!(d.elevation_deg, 0.0);
    }

    #[test]
    fn right_edge_maps_to_half_view() {
        let d = pixel_to_direction(&cam(), px(1280.0, 360.0)).unwrap();
        assert!((d.azimuth_deg - 120.0).abs() < 1e-12);
        assert!(d.elevation_deg.abs() < 1e-12);
    }

    #[test]
    fn quarter_width_pixel() {
        // 90 + atan(-0.5 * tan 30°) evaluated with mpmath at 30 digits.
        let expected = 73.897_886_248_013_985_f64;
        let d = pixel_to_direction(&cam(), px(320.0, 360.0)).unwrap();
        assert!((d.azimuth_deg - expected).abs() < 1e-12, "{}", d.azimuth_deg);
        let back = direction_to_pixel(&cam(), d).unwrap();
        assert!((back.u - 320.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_of_line_of_sight_is_center() {
        let p = direction_to_pixel(
            &cam(),
            PolarDirection {
                azimuth_deg: 90.0,
                elevation_deg: 0.0,
            },
        )
        .unwrap();
        assert_eq!(p, px(640.0, 360.0));
    }

    #[test]
    fn near_edge_approaches_width() {
        for eps in [1e-3, 1e-6, 1e-9] {
            let p = direction_to_pixel(
                &cam(),
                PolarDirection {
                    azimuth_deg: 120.0 - eps,
                    elevation_deg: 0.0,
                },
            )
            .unwrap();
            assert!(p.u < 1280.0 && 1280.0 - p.u < eps * 100.0);
        }
    }

    #[test]
    fn out_of_view_is_rejected() {
        let err = direction_to_pixel(
            &cam(),
            PolarDirection {
                azimuth_deg: 121.0,
                elevation_deg: 0.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotVisible { .. }));
        assert!(matches!(
            pixel_to_direction(&cam(), px(1281.0, 0.0)),
            Err(Error::PixelOutOfPlane { .. })
        ));
    }

    #[test]
    fn invalid_cameras_rejected() {
        let mut c = cam();
        c.horiz_view_deg = 0.0;
        assert!(matches!(pixel_to_direction(&c, px(0.0, 0.0)), Err(Error::Config(_))));
        let mut c = cam();
        c.pixel_height = 0;
        assert!(matches!(pixel_to_direction(&c, px(0.0, 0.0)), Err(Error::Config(_))));
    }

    fn three_cameras() -> Vec<CameraModel> {
        [30.0, 90.0, 150.0]
            .iter()
            .map(|&az| CameraModel {
                los_azimuth_deg: az,
                ..cam()
            })
            .collect()
    }

    #[test]
    fn camera_lookup() {
        let rig = CameraRig::new(three_cameras()).unwrap();
        assert_eq!(rig.camera_for_azimuth(90.0), Some(1));
        assert_eq!(rig.camera_for_azimuth(185.0), None);
        assert_eq!(rig.camera_for_azimuth(60.0), Some(1));
        assert_eq!(rig.camera_for_azimuth(0.0), Some(0));
        assert_eq!(rig.camera_for_azimuth(179.9), Some(2));
    }

    #[test]
    fn overlapping_cameras_rejected() {
        let mut cams = three_cameras();
        cams[1].los_azimuth_deg = 80.0;
        assert!(matches!(
            CameraRig::new(cams),
            Err(Error::OverlappingCameras { first: 0, second: 1 })
        ));
    }

    #[test]
    fn clamping() {
        assert_eq!(clamp_azimuth(-0.3, 180.0), 0.0);
        assert_eq!(clamp_azimuth(180.2, 180.0), 180.0);
        assert_eq!(clamp_azimuth(42.0, 180.0), 42.0);
    }
}
