//! Reference aggregation schemes: classic FedAvg over `A` and `B` separately,
//! the ideal product average, FLoRA stacking, FlexLoRA SVD redistribution and
//! HETLoRA zero-padding.

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};

/// A conventional LoRA upload: `a` is `r x n`, `b` is `m x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomAdapterUpdate {
    pub a: Matrix,
    pub b: Matrix,
    pub data_count: usize,
}

impl HomAdapterUpdate {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn product(&self) -> Result<Matrix> {
        self.b.matmul(&self.a)
    }
}

/// `p_k = |D_k| / sum |D|`.
pub fn data_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::Aggregation("no data to weight".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn check_nonempty<T>(items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Aggregation("no updates to aggregate".into()));
    }
    Ok(())
}

/// FedAvg on the factors: `(sum p_k A_k, sum p_k B_k)`. All ranks must match.
pub fn classic_aggregate(updates: &[HomAdapterUpdate]) -> Result<(Matrix, Matrix)> {
    check_nonempty(updates)?;
    let r = updates[0].rank();
    if let Some(u) = updates.iter().find(|u| u.rank() != r) {
        return Err(Error::Aggregation(format!(
            "classic aggregation needs homogeneous ranks, got {r} and {}",
            u.rank()
        )));
    }
    let p = data_weights(&updates.iter().map(|u| u.data_count).collect::<Vec<_>>())?;
    let mut a = Matrix::zeros(updates[0].a.rows(), updates[0].a.cols());
    let mut b = Matrix::zeros(updates[0].b.rows(), updates[0].b.cols());
    for (u, &pk) in updates.iter().zip(&p) {
        a.add_scaled(pk, &u.a)?;
        b.add_scaled(pk, &u.b)?;
    }
    Ok((a, b))
}

/// Data-weighted mean of full updates.
pub fn ideal_aggregate(updates: &[(Matrix, usize)]) -> Result<Matrix> {
    check_nonempty(updates)?;
    let p = data_weights(&updates.iter().map(|u| u.1).collect::<Vec<_>>())?;
    let (m, n) = updates[0].0.shape();
    let mut out = Matrix::zeros(m, n);
    for ((dw, _), &pk) in updates.iter().zip(&p) {
        out.add_scaled(pk, dw)?;
    }
    Ok(out)
}

/// Product average of LoRA uploads, any ranks.
pub fn ideal_from_adapters(updates: &[HomAdapterUpdate]) -> Result<Matrix> {
    let products = updates.iter().map(|u| Ok((u.product()?, u.data_count))).collect::<Result<Vec<_>>>()?;
    ideal_aggregate(&products)
}

/// Stacks `[sqrt(p_1) B_1 | ...]` and `[sqrt(p_1) A_1; ...]` and multiplies.
/// Equal to [`ideal_aggregate`] up to rounding.
pub fn flora_aggregate(updates: &[HomAdapterUpdate]) -> Result<Matrix> {
    check_nonempty(updates)?;
    let p = data_weights(&updates.iter().map(|u| u.data_count).collect::<Vec<_>>())?;
    let mut stacked_b = Matrix::zeros(updates[0].b.rows(), 0);
    let mut stacked_a = Matrix::zeros(0, updates[0].a.cols());
    for (u, &pk) in updates.iter().zip(&p) {
        let s = pk.sqrt();
        stacked_b = stacked_b.hstack(&u.b.scale(s))?;
        stacked_a = stacked_a.vstack(&u.a.scale(s))?;
    }
    stacked_b.matmul(&stacked_a)
}

/// Parameters uploaded when every client sends both factors: `sum r_k (m + n)`.
pub fn stacked_param_count(ranks: &[usize], m: usize, n: usize) -> usize {
    ranks.iter().map(|r| r * (m + n)).sum()
}

/// Ideal aggregate, then a rank-`r_k` SVD truncation per client:
/// `B_k = U_k diag(sigma_k)`, `A_k = V_k^T`. Returns `(A_k, B_k)` pairs.
pub fn flexlora_aggregate(updates: &[HomAdapterUpdate], target_ranks: &[usize]) -> Result<Vec<(Matrix, Matrix)>> {
    let w = ideal_from_adapters(updates)?;
    flexlora_redistribute(&w, target_ranks)
}

/// SVD truncations of an already aggregated update.
pub fn flexlora_redistribute(w: &Matrix, target_ranks: &[usize]) -> Result<Vec<(Matrix, Matrix)>> {
    let full = w.rows().min(w.cols());
    if let Some(&r) = target_ranks.iter().find(|&&r| r > full) {
        return Err(Error::shape(format!("target rank {r} exceeds min(m, n) = {full}")));
    }
    let dec = svd(w)?;
    Ok(target_ranks
        .iter()
        .map(|&r| {
            let idx: Vec<usize> = (0..r).collect();
            let mut b = dec.u.select_cols(&idx);
            for j in 0..r {
                for i in 0..b.rows() {
                    b[(i, j)] *= dec.sigma[j];
                }
            }
            let a = dec.v.select_cols(&idx).transpose();
            (a, b)
        })
        .collect())
}

/// Pads every `B_k` with zero columns and `A_k` with zero rows up to the
/// largest rank, then takes data-weighted means. Returns `(A, B)`.
pub fn hetlora_aggregate(updates: &[HomAdapterUpdate]) -> Result<(Matrix, Matrix)> {
    check_nonempty(updates)?;
    let r_max = updates.iter().map(HomAdapterUpdate::rank).max().unwrap_or(0);
    let padded = updates
        .iter()
        .map(|u| Ok(HomAdapterUpdate { a: u.a.pad_rows(r_max)?, b: u.b.pad_cols(r_max)?, data_count: u.data_count }))
        .collect::<Result<Vec<_>>>()?;
    classic_aggregate(&padded)
}

/// `|(sum p B_k)(sum p A_k) - sum p B_k A_k|_F`; `None` for mixed ranks.
pub fn interference_gap(updates: &[HomAdapterUpdate]) -> Result<Option<f64>> {
    check_nonempty(updates)?;
    let r = updates[0].rank();
    if updates.iter().any(|u| u.rank() != r) {
        return Ok(None);
    }
    let (a, b) = classic_aggregate(updates)?;
    let classic = b.matmul(&a)?;
    let ideal = ideal_from_adapters(updates)?;
    Ok(Some(classic.sub(&ideal)?.frobenius_norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn random_update(rng: &mut crate::rng::SimRng, m: usize, n: usize, r: usize, data: usize) -> HomAdapterUpdate {
        HomAdapterUpdate {
            a: Matrix::random_normal(r, n, 1.0, rng),
            b: Matrix::random_normal(m, r, 1.0, rng),
            data_count: data,
        }
    }

    #[test]
    fn classic_singleton_and_duplicates() {
        let mut rng = Seed(1).rng();
        let u = random_update(&mut rng, 3, 4, 2, 10);
        assert_eq!(classic_aggregate(std::slice::from_ref(&u)).unwrap(), (u.a.clone(), u.b.clone()));
        let (a, b) = classic_aggregate(&[u.clone(), u.clone()]).unwrap();
        assert!(a.sub(&u.a).unwrap().frobenius_norm() < 1e-15);
        assert!(b.sub(&u.b).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn classic_rejects_mixed_ranks() {
        let mut rng = Seed(2).rng();
        let u = [random_update(&mut rng, 3, 4, 2, 1), random_update(&mut rng, 3, 4, 3, 1)];
        assert!(matches!(classic_aggregate(&u), Err(Error::Aggregation(_))));
    }

    #[test]
    fn classic_product_deviates_from_ideal() {
        let mut rng = Seed(3).rng();
        let u = [random_update(&mut rng, 4, 5, 2, 3), random_update(&mut rng, 4, 5, 2, 5)];
        let gap = interference_gap(&u).unwrap().unwrap();
        assert!(gap > 1e-6, "{gap}");
    }

    #[test]
    fn ideal_cases() {
        let mut rng = Seed(4).rng();
        let dw = Matrix::random_normal(3, 3, 1.0, &mut rng);
        assert_eq!(ideal_aggregate(&[(dw.clone(), 4)]).unwrap(), dw);
        assert_eq!(ideal_aggregate(&[(dw.clone(), 4), (dw.scale(-1.0), 4)]).unwrap(), Matrix::zeros(3, 3));

        let ws: Vec<Matrix> = (0..3).map(|_| Matrix::random_normal(2, 3, 1.0, &mut rng)).collect();
        let counts = [2usize, 3, 5];
        let got = ideal_aggregate(&ws.iter().cloned().zip(counts).collect::<Vec<_>>()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let want = (2.0 * ws[0][(i, j)] + 3.0 * ws[1][(i, j)] + 5.0 * ws[2][(i, j)]) / 10.0;
                assert!((got[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flora_matches_ideal() {
        let mut rng = Seed(5).rng();
        let single = random_update(&mut rng, 3, 4, 2, 7);
        let got = flora_aggregate(std::slice::from_ref(&single)).unwrap();
        assert!(got.sub(&single.product().unwrap()).unwrap().frobenius_norm() < 1e-14);

        let u = [random_update(&mut rng, 3, 4, 2, 7), random_update(&mut rng, 3, 4, 3, 2)];
        let ideal = ideal_from_adapters(&u).unwrap();
        assert!(
            flora_aggregate(&u).unwrap().sub(&ideal).unwrap().frobenius_norm()
                <= 1e-12 * ideal.frobenius_norm().max(1.0)
        );
        assert_eq!(stacked_param_count(&[2, 3], 3, 4), 35);
    }

    #[test]
    fn flexlora_cases() {
        let w = Matrix::diag(&[3.0, 1.0]);
        let out = flexlora_redistribute(&w, &[2, 1]).unwrap();
        let full = out[0].1.matmul(&out[0].0).unwrap();
        assert!(full.sub(&w).unwrap().frobenius_norm() <= 1e-8);
        let r1 = out[1].1.matmul(&out[1].0).unwrap();
        assert!(r1.sub(&Matrix::diag(&[3.0, 0.0])).unwrap().frobenius_norm() <= 1e-12);
        assert!(matches!(flexlora_redistribute(&w, &[3]), Err(Error::Shape(_))));
    }

    #[test]
    fn hetlora_cases() {
        let mut rng = Seed(6).rng();
        let hom = [random_update(&mut rng, 3, 4, 2, 1), random_update(&mut rng, 3, 4, 2, 3)];
        assert_eq!(hetlora_aggregate(&hom).unwrap(), classic_aggregate(&hom).unwrap());

        let one = random_update(&mut rng, 3, 4, 2, 1);
        assert_eq!(hetlora_aggregate(std::slice::from_ref(&one)).unwrap(), (one.a.clone(), one.b.clone()));

        let het = [random_update(&mut rng, 3, 5, 2, 4), random_update(&mut rng, 3, 5, 4, 6)];
        let (a, b) = hetlora_aggregate(&het).unwrap();
        assert_eq!((a.rows(), b.cols()), (4, 4));
        let gap = b.matmul(&a).unwrap().sub(&ideal_from_adapters(&het).unwrap()).unwrap().frobenius_norm();
        assert!(gap > 1e-6);
        assert_eq!(interference_gap(&het).unwrap(), None);
    }

    #[test]
    fn identical_clients_have_no_interference() {
        let mut rng = Seed(7).rng();
        let u = random_update(&mut rng, 3, 4, 2, 5);
        assert!(interference_gap(&[u.clone(), u.clone()]).unwrap().unwrap() < 1e-14);
        assert!(interference_gap(&[u]).unwrap().unwrap() < 1e-14);
    }
}
