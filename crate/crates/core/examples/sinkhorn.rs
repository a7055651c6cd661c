//! Entropic optimal transport on a small cost matrix, then the heterogeneous
//! affinity between two feature sets.

use ndarray::array;
use xmod::synth::{generate, SynthSpec};
use xmod::transport::{heterogeneous_affinity, sinkhorn, SinkhornSettings, TransportProblem};

fn main() -> xmod::Result<()> {
    let cost = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0], [0.5, 0.5, 0.5]];
    for lambda in [1.0, 10.0, 100.0] {
        let problem = TransportProblem::uniform(cost.clone(), lambda, SinkhornSettings::default());
        let plan = sinkhorn(&problem)?;
        println!(
            "lambda {lambda:>5}: cost {:.4}, {} iterations, marginal error {:.1e}",
            plan.total_cost(&cost),
            plan.iterations_used,
            plan.marginal_error
        );
    }

    let data = generate(&SynthSpec { num_ids: 3, per_id_v: 4, per_id_r: 3, dim: 8, seed: 1, ..SynthSpec::default() })?;
    let he = heterogeneous_affinity(&data.visible, &data.infrared, 25.0, SinkhornSettings::default())?;
    println!("visible row masses: {:.4}", he.plan.plan.sum_axis(ndarray::Axis(1)));
    println!("first visible row of the row-normalized affinity:");
    println!("{:.3}", he.forward.values.row(0));
    Ok(())
}
