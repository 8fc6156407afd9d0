//! Label histograms of client shards under IID, mixed and label-skew splits.

use aflora::data::{generate, partition, PartitionMode, SyntheticTask};
use aflora::Result;

fn main() -> Result<()> {
    let classes = 6;
    let data = generate(&SyntheticTask::gaussian_blobs(4, classes, 100, 2.0, 1.0, 0))?;
    for mode in [
        PartitionMode::Iid,
        PartitionMode::Noniid { epsilon: 0.8 },
        PartitionMode::Noniid { epsilon: 0.2 },
        PartitionMode::LabelSkewTwo,
    ] {
        let parts = partition(&data, 3, mode, 0)?;
        println!("{mode:?}");
        for (k, shard) in parts.shards.iter().enumerate() {
            println!("  client {k}: {:?}", shard.label_histogram(classes));
        }
        println!(
            "  public {} / test {} / unassigned {}",
            parts.public_split.len(),
            parts.test_split.len(),
            parts.unassigned.len()
        );
    }
    Ok(())
}
