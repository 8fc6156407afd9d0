//! Final accuracy of every method as the client data moves from skewed to
//! nearly IID, averaged over a few seeds.

use aflora::data::PartitionMode;
use aflora::harness::TaskConfig;
use aflora::{run_experiment, ExperimentConfig, Method, Result};

fn main() -> Result<()> {
    let epsilons = [0.2, 0.4, 0.6];
    let seeds = 0..3u64;
    print!("{:<9}", "method");
    for e in epsilons {
        print!(" eps={e:<5}");
    }
    println!();
    for method in Method::ALL {
        print!("{:<9}", method.name());
        for epsilon in epsilons {
            let mut total = 0.0;
            for seed in seeds.clone() {
                let cfg = ExperimentConfig {
                    method,
                    clients: 8,
                    rank_caps: vec![8; 8],
                    rounds: 10,
                    participation: 1.0,
                    partition: PartitionMode::Noniid { epsilon },
                    task: TaskConfig {
                        feature_dim: 12,
                        num_classes: 8,
                        samples_per_class: 2000,
                        separation: 2.0,
                        noise_std: 1.0,
                    },
                    local_epochs: 5,
                    lr: 0.05,
                    server_epochs: 5,
                    server_lr: 0.5,
                    seed,
                    ..ExperimentConfig::default()
                };
                total += run_experiment(&cfg)?.final_accuracy();
            }
            print!(" {:<9.4}", total / seeds.clone().count() as f64);
        }
        println!();
    }
    Ok(())
}
