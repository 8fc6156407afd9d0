//! Dimension pruning: one hand-made gate vector, then a short federated run
//! showing how each client's effective rank shrinks over rounds.

use aflora::adapter::Mask;
use aflora::client::ddr_prune;
use aflora::{run_experiment, ExperimentConfig, Result};

fn main() -> Result<()> {
    let lambda_sq = [4.0, 4.0, 0.1];
    for beta in [0.5, 1.0, 2.0] {
        let d = ddr_prune(&Mask::full(3), &lambda_sq, beta, true)?;
        println!("beta {beta}: sigma {:.4}, mask {:?}", d.sigma, d.mask.as_slice());
    }

    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/small.json"))?;
    let report = run_experiment(&cfg)?;
    println!("\nround  r_eff per client        pruned");
    for r in &report.rounds {
        println!("{:>5}  {:<24} {}", r.round, format!("{:?}", r.per_client_r_eff), r.pruned_dims);
    }
    Ok(())
}
