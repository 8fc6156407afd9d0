//! Synthetic Gaussian-blob classification data and federated partitioning.
//!
//! Every partition mode first carves out a public split (server side) and a
//! test split, both drawn uniformly at random, and then distributes the
//! remaining pool over `K` client shards.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{Seed, TAG_DATA, TAG_PARTITION};

/// Fraction of the data held by the server as its public split.
pub const PUBLIC_FRACTION: f64 = 0.02;
/// Fraction of the data held out for global evaluation.
pub const TEST_FRACTION: f64 = 0.10;

/// Labelled samples. Row `i` of `features` belongs to sample `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn empty(n: usize) -> Self {
        Self { ids: Vec::new(), features: Matrix::zeros(0, n), labels: Vec::new() }
    }

    /// Rows at the given positions (not sample ids), in order.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            features: self.features.select_rows(positions),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
        }
    }

    pub fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// CSV with header `sample_id,label,f0..f{n-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string(), "label".to_string()];
        header.extend((0..self.feature_dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].to_string(), self.labels[i].to_string()];
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Parameters of an isotropic Gaussian-blob task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub n: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticTask {
    /// Class means drawn as `separation * N(0, I_n) / sqrt(n)` from the task seed.
    pub fn gaussian_blobs(
        n: usize,
        num_classes: usize,
        samples_per_class: usize,
        separation: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let mut rng = Seed(seed).child(TAG_DATA).child(0).rng();
        let scale = separation / (n as f64).sqrt();
        let class_means =
            (0..num_classes).map(|_| (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        Self { n, num_classes, samples_per_class, class_means, noise_std, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.num_classes == 0 {
            return Err(Error::Data("feature dimension and class count must be positive".into()));
        }
        if self.class_means.len() != self.num_classes || self.class_means.iter().any(|mu| mu.len() != self.n) {
            return Err(Error::Data("class means do not match (num_classes, n)".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Data(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        for i in 0..self.num_classes {
            for j in i + 1..self.num_classes {
                if self.class_means[i] == self.class_means[j] {
                    return Err(Error::Data(format!("classes {i} and {j} share a mean")));
                }
            }
        }
        Ok(())
    }
}

/// Draws `x = mean[y] + noise_std * N(0, I)`. Sample `i` has label
/// `i % num_classes`, so the label histogram is exactly balanced.
pub fn generate(task: &SyntheticTask) -> Result<Dataset> {
    task.validate()?;
    let total = task.num_classes * task.samples_per_class;
    let mut rng = Seed(task.seed).child(TAG_DATA).child(1).rng();
    let mut data = Vec::with_capacity(total * task.n);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let y = i % task.num_classes;
        labels.push(y);
        for &mu in &task.class_means[y] {
            data.push(mu + task.noise_std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Dataset { ids: (0..total).collect(), features: Matrix::from_vec(total, task.n, data)?, labels })
}

/// How the client pool is split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    /// Each shard mixes a fraction `epsilon` of uniform draws with `1 - epsilon`
    /// drawn from its dominant classes.
    Noniid {
        epsilon: f64,
    },
    /// Each shard holds exactly two labels.
    LabelSkewTwo,
}

/// Client shards plus the server's public split and the global test split.
#[derive(Debug, Clone)]
pub struct PartitionedDataset {
    pub shards: Vec<Dataset>,
    pub public_split: Dataset,
    pub test_split: Dataset,
    /// Sample ids that no shard could take (only label skew with `2K < C` leaves any).
    pub unassigned: Vec<usize>,
    pub num_classes: usize,
}

impl PartitionedDataset {
    pub fn total_len(&self) -> usize {
        self.shards.iter().map(Dataset::len).sum::<usize>()
            + self.public_split.len()
            + self.test_split.len()
            + self.unassigned.len()
    }

    /// True when shards, public and test splits share no sample id.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        let all = self
            .shards
            .iter()
            .chain([&self.public_split, &self.test_split])
            .flat_map(|d| d.ids.iter())
            .chain(self.unassigned.iter());
        for id in all {
            if !seen.insert(*id) {
                return false;
            }
        }
        true
    }
}

struct Holdout {
    public: Vec<usize>,
    test: Vec<usize>,
    pool: Vec<usize>,
}

fn holdout(data: &Dataset, rng: &mut impl Rng) -> Holdout {
    let total = data.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let n_public = (PUBLIC_FRACTION * total as f64).round() as usize;
    let n_test = (TEST_FRACTION * total as f64).round() as usize;
    let pool = order.split_off(n_public + n_test);
    let test = order.split_off(n_public);
    Holdout { public: order, test, pool }
}

fn num_classes_of(data: &Dataset) -> usize {
    data.labels.iter().max().map_or(0, |&y| y + 1)
}

fn assemble(
    data: &Dataset,
    h: Holdout,
    shards: Vec<Vec<usize>>,
    unassigned: Vec<usize>,
    num_classes: usize,
) -> PartitionedDataset {
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    PartitionedDataset {
        shards: shards.into_iter().map(|s| data.subset(&sorted(s))).collect(),
        public_split: data.subset(&sorted(h.public)),
        test_split: data.subset(&sorted(h.test)),
        unassigned: sorted(unassigned.iter().map(|&p| data.ids[p]).collect()),
        num_classes,
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Partition("at least one client is required".into()));
    }
    Ok(())
}

/// Uniform random split of the pool into `k` near-equal shards.
pub fn partition_iid(data: &Dataset, k: usize, seed: u64) -> Result<PartitionedDataset> {
    check_k(k)?;
    let mut rng = Seed(seed).child(TAG_PARTITION).rng();
    let mut h = holdout(data, &mut rng);
    h.pool.shuffle(&mut rng);
    let mut shards = vec![Vec::new(); k];
    for (i, p) in h.pool.iter().enumerate() {
        shards[i % k].push(*p);
    }
    h.pool.clear();
    let nc = num_classes_of(data);
    Ok(assemble(data, h, shards, Vec::new(), nc))
}

/// Mixture partition. Classes are assigned to clients round-robin: class `c`
/// is dominant for client `c % K`, and when `K > C` also for every client `i`
/// with `i % C == c`. For each class, a `1 - epsilon` share of its pool is
/// split evenly across its owners; everything else is shuffled and dealt
/// round-robin.
pub fn partition_noniid(data: &Dataset, k: usize, epsilon: f64, seed: u64) -> Result<PartitionedDataset> {
    check_k(k)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Partition(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let nc = num_classes_of(data);
    let mut rng = Seed(seed).child(TAG_PARTITION).rng();
    let mut h = holdout(data, &mut rng);
    h.pool.shuffle(&mut rng);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for &p in &h.pool {
        by_class[data.labels[p]].push(p);
    }
    h.pool.clear();

    let mut shards = vec![Vec::new(); k];
    let mut shared = Vec::new();
    for (c, members) in by_class.into_iter().enumerate() {
        let owners: Vec<usize> = (0..k).filter(|&i| i % nc == c || i == c % k).collect();
        let dominant = ((1.0 - epsilon) * members.len() as f64).round() as usize;
        if dominant < owners.len() && epsilon < 1.0 {
            return Err(Error::Partition(format!(
                "class {c} has {} pooled samples, too few to give its {} clients a dominant share",
                members.len(),
                owners.len()
            )));
        }
        let (dom, rest) = members.split_at(dominant);
        for (i, p) in dom.iter().enumerate() {
            shards[owners[i % owners.len()]].push(*p);
        }
        shared.extend_from_slice(rest);
    }
    shared.shuffle(&mut rng);
    for (i, p) in shared.into_iter().enumerate() {
        shards[i % k].push(p);
    }
    if let Some(i) = shards.iter().position(Vec::is_empty) {
        return Err(Error::Partition(format!("client {i} received no samples")));
    }
    Ok(assemble(data, h, shards, Vec::new(), nc))
}

/// Client `k` receives labels `{2k mod C, 2k+1 mod C}`; each label's pool is
/// split evenly over the clients holding it.
pub fn partition_label_skew_two(data: &Dataset, k: usize, seed: u64) -> Result<PartitionedDataset> {
    check_k(k)?;
    let nc = num_classes_of(data);
    if nc < 2 {
        return Err(Error::Partition(format!("label skew needs at least 2 classes, found {nc}")));
    }
    let mut rng = Seed(seed).child(TAG_PARTITION).rng();
    let mut h = holdout(data, &mut rng);
    h.pool.shuffle(&mut rng);

    let supports: Vec<[usize; 2]> = (0..k).map(|i| [(2 * i) % nc, (2 * i + 1) % nc]).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for &p in &h.pool {
        by_class[data.labels[p]].push(p);
    }
    h.pool.clear();

    let mut shards = vec![Vec::new(); k];
    let mut unassigned = Vec::new();
    for (c, members) in by_class.into_iter().enumerate() {
        let owners: Vec<usize> = (0..k).filter(|&i| supports[i].contains(&c)).collect();
        if owners.is_empty() {
            unassigned.extend(members);
            continue;
        }
        if members.len() < owners.len() {
            return Err(Error::Partition(format!(
                "class {c} has {} pooled samples for {} clients",
                members.len(),
                owners.len()
            )));
        }
        for (i, p) in members.into_iter().enumerate() {
            shards[owners[i % owners.len()]].push(p);
        }
    }
    Ok(assemble(data, h, shards, unassigned, nc))
}

/// Dispatches on `mode`.
pub fn partition(data: &Dataset, k: usize, mode: PartitionMode, seed: u64) -> Result<PartitionedDataset> {
    match mode {
        PartitionMode::Iid => partition_iid(data, k, seed),
        PartitionMode::Noniid { epsilon } => partition_noniid(data, k, epsilon, seed),
        PartitionMode::LabelSkewTwo => partition_label_skew_two(data, k, seed),
    }
}
