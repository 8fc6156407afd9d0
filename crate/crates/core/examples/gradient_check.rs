//! Analytic gradients of the adapter objective against central differences,
//! for a few random adapters and each value of the regularizer weight.

use aflora::adapter::{DecoupledAdapter, Mask};
use aflora::data::{generate, SyntheticTask};
use aflora::linalg::Matrix;
use aflora::model::{check_gradients, ToyModel};
use aflora::{Result, Seed};

fn main() -> Result<()> {
    let task = SyntheticTask::gaussian_blobs(6, 4, 10, 2.0, 1.0, 1);
    let batch = generate(&task)?;
    for trial in 0..3u64 {
        let mut rng = Seed(trial).rng();
        let model = ToyModel::new(Matrix::random_normal(4, 6, 0.3, &mut rng));
        let a = Matrix::random_row_normalized(3, 6, 1.0, &mut rng);
        let b = Matrix::random_normal(4, 3, 0.5, &mut rng);
        let ad = DecoupledAdapter::from_parts(a, b, vec![0.8, -1.2, 0.4], Mask::full(3))?;
        for gamma in [0.0, 0.1, 1.0] {
            let g = check_gradients(&model, &ad, &batch, gamma, 1e-6)?;
            println!(
                "trial {trial} gamma {gamma:<3}: {} entries, max abs {:.2e}, max rel {:.2e}, pass {}",
                g.entries,
                g.max_abs_err,
                g.max_rel_err,
                g.passes(1e-5)
            );
        }
    }
    Ok(())
}
