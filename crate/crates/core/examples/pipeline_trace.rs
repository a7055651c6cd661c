//! Writes a few epochs of drifting feature snapshots to a scratch directory
//! and runs the epoch trace over them. The modality gap shrinks each epoch,
//! standing in for a network that is learning.

use xmod::config::PipelineConfig;
use xmod::io::{write_ground_truth, write_matrix};
use xmod::pipeline::{encode_trace, run_trace};
use xmod::synth::{generate, SynthSpec};

fn main() -> xmod::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut gt = None;
    for (epoch, gap) in [0.8, 0.5, 0.3, 0.1].into_iter().enumerate() {
        let data = generate(&SynthSpec { num_ids: 6, per_id_v: 10, per_id_r: 10, modality_gap: gap, seed: 4, ..SynthSpec::default() })?;
        write_matrix(&dir.path().join(format!("epoch_{epoch}_visible.mfv")), data.visible.data())?;
        write_matrix(&dir.path().join(format!("epoch_{epoch}_infrared.mfv")), data.infrared.data())?;
        gt = Some(data.gt);
    }
    let gt = gt.expect("at least one epoch");
    write_ground_truth(&dir.path().join("gt.csv"), &gt)?;

    let rows = run_trace(dir.path(), &PipelineConfig::default(), Some(&gt))?;
    print!("{}", String::from_utf8_lossy(&encode_trace(&rows)?));
    Ok(())
}
