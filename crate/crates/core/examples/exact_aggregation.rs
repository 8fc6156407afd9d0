//! Three clients with ranks 8, 4 and 2 share one global `A`. Their merged
//! uploads are zero-padded, averaged with rank-aware weights, and the product
//! with `A` is compared against the weighted sum of each client's own update.

use aflora::adapter::{truncate_a, DecoupledAdapter, Mask};
use aflora::client::ClientUpdate;
use aflora::linalg::Matrix;
use aflora::server::{aggregate_b, rank_aware_weights};
use aflora::{Result, Seed};
use rand::Rng;

fn main() -> Result<()> {
    let (m, n, r_max) = (10, 16, 8);
    let mut rng = Seed(7).rng();
    let a_global = Matrix::random_row_normalized(r_max, n, 1.0, &mut rng);

    let mut updates = Vec::new();
    let mut adapters = Vec::new();
    for (id, (rank, samples)) in [(8, 120), (4, 300), (2, 80)].into_iter().enumerate() {
        let lambda: Vec<f64> = (0..rank).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut mask = Mask::full(rank);
        if rank > 2 {
            mask.set(1, false);
        }
        let b = Matrix::random_normal(m, rank, 1.0, &mut rng);
        let ad = DecoupledAdapter::from_parts(truncate_a(&a_global, rank)?, b, lambda, mask)?;
        let (merged, mask) = ad.merged_upload();
        updates.push(ClientUpdate::new(id, merged, mask, samples)?);
        adapters.push(ad);
    }

    let weights = rank_aware_weights(&updates)?;
    let global = aggregate_b(&updates, r_max)?.matmul(&a_global)?;
    let mut expected = Matrix::zeros(m, n);
    for (ad, &p) in adapters.iter().zip(&weights) {
        expected.add_scaled(p, &ad.delta_weight())?;
    }
    for (u, p) in updates.iter().zip(&weights) {
        println!("client {} r_eff {} samples {:>3} weight {p:.4}", u.client_id, u.r_eff, u.data_count);
    }
    let residual = global.sub(&expected)?.frobenius_norm();
    println!("|B_g A_g - sum p_k dW_k|_F = {residual:.3e} (norm of update {:.3})", expected.frobenius_norm());
    Ok(())
}
