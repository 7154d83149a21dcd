//! Pixel back-projection through the default three-camera rig.
//!
//! ```text
//! cargo run --example camera_geometry
//! ```

use csipos::geometry::{direction_to_pixel, pixel_to_direction, PixelCoord};
use csipos::scene::SceneConfig;

fn main() -> csipos::Result<()> {
    let rig = SceneConfig::default().rig()?;
    for (i, cam) in rig.cameras().iter().enumerate() {
        let (lo, hi) = cam.azimuth_span();
        println!(
            "camera {i}: line of sight {:.0}°, covers [{lo:.0}°, {hi:.0}°), center pixel {:.4}° wide",
            cam.los_azimuth_deg,
            cam.center_pixel_width_deg()
        );
        let w = f64::from(cam.pixel_width);
        let h = f64::from(cam.pixel_height);
        for u in [0.0, w / 4.0, w / 2.0, 3.0 * w / 4.0, w] {
            let p = PixelCoord { u, v: h / 2.0 };
            let d = pixel_to_direction(cam, p)?;
            let back = direction_to_pixel(cam, d)?;
            println!(
                "  u = {u:>6.1} -> azimuth {:>7.3}°, elevation {:>6.2}° -> u = {:.6}",
                d.azimuth_deg, d.elevation_deg, back.u
            );
        }
    }
    for az in [10.0, 59.99, 60.0, 135.0, 179.0] {
        match rig.camera_for_azimuth(az) {
            Some(i) => println!("azimuth {az:>6.2}° is seen by camera {i}"),
            None => println!("azimuth {az:>6.2}° is outside every camera"),
        }
    }
    Ok(())
}
