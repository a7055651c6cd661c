//! One V2R association with the inconsistency trace printed per iteration.

use xmod::clustering::cluster_features;
use xmod::config::PipelineConfig;
use xmod::mult::mult_associate_traced;
use xmod::synth::{generate, SynthSpec};
use xmod::Direction;

fn main() -> xmod::Result<()> {
    let data = generate(&SynthSpec { num_ids: 5, per_id_v: 12, per_id_r: 10, modality_gap: 0.5, seed: 3, ..SynthSpec::default() })?;
    let cfg = PipelineConfig::default();
    let av = cluster_features(&data.visible, &cfg)?;
    let ar = cluster_features(&data.infrared, &cfg)?;

    let run = mult_associate_traced(&data.visible, &data.infrared, &av, &ar, &cfg, Direction::V2R, true)?;
    println!("t   homogeneous  heterogeneous  self      weighted");
    for (t, r) in run.trace.iter().enumerate() {
        println!(
            "{t:<3} {:>11.4}  {:>13.4}  {:>8.4}  {:>8.4}",
            r.homogeneous_src + r.homogeneous_tgt,
            r.heterogeneous_src + r.heterogeneous_tgt,
            r.self_src + r.self_tgt,
            r.weighted_total
        );
    }
    println!("{} iterations, capped: {}", run.iterations, run.capped);

    let hard = run.labels.cross.hard();
    println!("infrared instances labeled in the visible space: {:?}", hard.labels());
    Ok(())
}
