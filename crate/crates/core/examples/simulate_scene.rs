//! Simulates a few time slots, encodes their CSI and round-trips a dataset
//! through the binary file format.
//!
//! ```text
//! cargo run --example simulate_scene -- [slots]
//! ```

use csipos::csi::to_tensor;
use csipos::io::dataset::{load_dataset, save_dataset};
use csipos::scene::{generate_datasets, SceneConfig, SceneSimulator, SplitSizes};

fn main() -> csipos::Result<()> {
    let slots: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = SceneConfig {
        num_antennas: 8,
        num_subcarriers: 16,
        ..SceneConfig::default()
    };
    let sim = SceneSimulator::new(cfg.clone())?;
    for t in 0..slots {
        let snap = sim.snapshot(t);
        println!("slot {t}: {} vehicles served", snap.csi.len());
        for (pos, h) in snap.truth_positions.iter().flatten().zip(&snap.csi) {
            let x = to_tensor(h);
            println!(
                "  at {:>6.2}° {:>5.2} m  |h|² = {:.3e}  first cell (|h|, sin, cos) = ({:.3e}, {:.3}, {:.3})",
                pos.azimuth_deg,
                pos.distance_m,
                h.frobenius_sq(),
                x.get(0, 0, 0),
                x.get(1, 0, 0),
                x.get(2, 0, 0)
            );
        }
        let detections: Vec<String> = snap.detected_azimuths.iter().map(|a| format!("{a:.2}°")).collect();
        println!("  camera detections: [{}]", detections.join(", "));
    }

    let sizes = SplitSizes {
        pretrain: 50,
        labeled: 20,
        validation: 20,
    };
    let (pretrain, _, _) = generate_datasets(&cfg, sizes)?;
    let path = std::env::temp_dir().join("csipos-example").join("pretrain.csip");
    save_dataset(&path, &pretrain)?;
    let restored = load_dataset(&path, Some(&cfg))?;
    println!(
        "saved {} snapshots to {} and read back {} identical: {}",
        pretrain.snapshots.len(),
        path.display(),
        restored.snapshots.len(),
        restored.snapshots == pretrain.snapshots
    );
    Ok(())
}
