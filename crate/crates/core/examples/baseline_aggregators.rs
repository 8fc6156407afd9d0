//! Every aggregation rule on the same set of heterogeneous-rank uploads,
//! measured against the weighted average of the clients' dense updates.

use aflora::baselines::{
    flexlora_aggregate, flora_aggregate, hetlora_aggregate, ideal_from_adapters, HomAdapterUpdate,
};
use aflora::linalg::Matrix;
use aflora::{Result, Seed};

fn main() -> Result<()> {
    let (m, n) = (8, 12);
    let mut rng = Seed(11).rng();
    let uploads: Vec<HomAdapterUpdate> = [(6, 200), (4, 100), (2, 50)]
        .into_iter()
        .map(|(r, count)| HomAdapterUpdate {
            a: Matrix::random_normal(r, n, 0.5, &mut rng),
            b: Matrix::random_normal(m, r, 0.5, &mut rng),
            data_count: count,
        })
        .collect();
    let ideal = ideal_from_adapters(&uploads)?;
    let gap = |w: &Matrix| w.sub(&ideal).map(|d| d.frobenius_norm());

    println!("|ideal|_F = {:.4}", ideal.frobenius_norm());
    println!("flora    gap {:.3e}", gap(&flora_aggregate(&uploads)?)?);
    let (a, b) = hetlora_aggregate(&uploads)?;
    println!("hetlora  gap {:.3e}", gap(&b.matmul(&a)?)?);

    let ranks: Vec<usize> = uploads.iter().map(HomAdapterUpdate::rank).collect();
    for (k, ((a, b), r)) in flexlora_aggregate(&uploads, &ranks)?.iter().zip(&ranks).enumerate() {
        println!("flexlora client {k} rank {r}: truncation gap {:.3e}", gap(&b.matmul(a)?)?);
    }
    Ok(())
}
