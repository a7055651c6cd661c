//! Forward evaluation of the training losses for both training modes, with
//! the memory banks refreshed after every batch.

use xmod::clustering::{centroids, cluster_features};
use xmod::config::PipelineConfig;
use xmod::losses::{LossBanks, TrainingMode};
use xmod::mult::mult_associate_both;
use xmod::pipeline::loss_pass;
use xmod::synth::{generate, SynthSpec};

fn main() -> xmod::Result<()> {
    let data = generate(&SynthSpec { num_ids: 6, per_id_v: 10, per_id_r: 8, seed: 2, ..SynthSpec::default() })?;
    let (fv, fr) = (&data.visible, &data.infrared);
    let cfg = PipelineConfig::default();
    let av = cluster_features(fv, &cfg)?;
    let ar = cluster_features(fr, &cfg)?;
    let (labels, _, _) = mult_associate_both(fv, fr, &av, &ar, &cfg)?;

    for mode in [TrainingMode::VBased, TrainingMode::RBased] {
        let mut banks = LossBanks::for_mode(
            centroids(fv, &av, cfg.tau, cfg.mu)?,
            centroids(fr, &ar, cfg.tau, cfg.mu)?,
            mode,
        );
        // two passes show the effect of the momentum updates
        for pass in 0..2 {
            let r = loss_pass(fv, fr, &labels, &mut banks, &cfg, mode)?;
            println!(
                "{mode:?} pass {pass}: im_v {:.4} im_r {:.4} cm {:.4} oclr_v {:.4} oclr_r {:.4} total {:.4}",
                r.l_im_v, r.l_im_r, r.l_cm, r.l_oclr_v, r.l_oclr_r, r.total
            );
        }
    }
    Ok(())
}
