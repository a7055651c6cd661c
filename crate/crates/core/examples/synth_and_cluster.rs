//! Generates a two-modality toy set and clusters each modality with DBSCAN.
//!
//! Run with `cargo run --example synth_and_cluster`.

use xmod::clustering::cluster_features;
use xmod::config::PipelineConfig;
use xmod::synth::{generate, GapMode, SynthSpec};
use xmod::Modality;

fn main() -> xmod::Result<()> {
    let spec = SynthSpec {
        num_ids: 6,
        per_id_v: 15,
        per_id_r: 12,
        dim: 16,
        modality_gap: 0.4,
        gap_mode: GapMode::PerIdOffset,
        seed: 7,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    println!(
        "{} visible and {} infrared features in {} dimensions",
        data.visible.len(),
        data.infrared.len(),
        data.visible.dim()
    );

    let cfg = PipelineConfig::default();
    for (name, features) in [("visible", &data.visible), ("infrared", &data.infrared)] {
        let assign = cluster_features(features, &cfg)?;
        println!(
            "{name}: {} clusters, sizes {:?}, {} noise points",
            assign.k(),
            assign.sizes(),
            assign.labels.noise_count()
        );
    }

    // identities are known here, so the clustering can be checked by eye
    let ids = data.gt.ids(Modality::Visible);
    println!("first visible identities: {:?}", &ids[..10]);
    Ok(())
}
