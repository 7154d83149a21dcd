//! Turns camera detections into angular occupancy targets.
//!
//! ```text
//! cargo run --example angular_labels -- [bins]
//! ```

use csipos::labels::{gaussian_vector, label_snapshot, nor_fuse, AngularGrid};

fn bar(v: &[f64]) -> String {
    const LEVELS: [char; 8] = [' ', '.', ':', '-', '=', '+', '*', '#'];
    v.iter()
        .map(|&x| LEVELS[((x * 8.0) as usize).min(7)])
        .collect()
}

fn main() -> csipos::Result<()> {
    let bins: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let grid = AngularGrid::new(180.0, bins)?;
    println!("{bins} bins of {:.2}° each", grid.bin_width());

    let detections = [23.4, 95.0, 101.0];
    let mut singles = Vec::new();
    for &az in &detections {
        let g = gaussian_vector(&grid, az)?;
        println!("{az:>6.1}°  |{}|  peak bin {}", bar(g.values()), g.peak_bin());
        singles.push(g);
    }
    let fused = nor_fuse(&singles)?;
    println!("fused    |{}|", bar(fused.values()));
    assert_eq!(fused, label_snapshot(&grid, &detections)?);

    let total: f64 = fused.values().iter().sum();
    println!("fused mass {total:.3} across {} vehicles", detections.len());
    println!("no detections -> {:?}", label_snapshot(&grid, &[])?.values().iter().sum::<f64>());
    Ok(())
}
