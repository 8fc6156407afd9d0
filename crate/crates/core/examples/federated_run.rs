//! One run from a JSON config, printed as the CSV the command line writes.
//! Pass a config path to override the bundled small config.

use aflora::harness::{csv_string, mean_cost_ratios};
use aflora::{run_experiment, ExperimentConfig, Result};

fn main() -> Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/small.json").into());
    let cfg = ExperimentConfig::load(&path)?;
    let report = run_experiment(&cfg)?;
    print!("{}", csv_string(&[&report])?);
    let (trained, comm) = mean_cost_ratios(&report.rounds);
    eprintln!(
        "initial accuracy {:.4}, final {:.4}, mean trained ratio {trained:.4}, mean comm ratio {comm:.4}",
        report.initial_accuracy,
        report.final_accuracy()
    );
    Ok(())
}
