//! Label-skewed client partitions.
//!
//! `hetero-label`: each client draws 3 to 6 distinct labels and receives the
//! samples of those labels. `hetero-dir`: for every class a proportion vector
//! over clients is drawn from a symmetric Dirichlet and the class's shuffled
//! samples are split contiguously by those proportions.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetView};
use crate::{Error, Result};

const MIN_LABELS: usize = 3;
const MAX_LABELS: usize = 6;
const LABEL_RETRIES: usize = 10_000;
const DIR_RETRIES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// `disjoint = false`: every holder of a label gets all of its samples.
    /// `disjoint = true`: a label's samples are split evenly among holders.
    HeteroLabel { disjoint: bool },
    HeteroDir { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub kind: PartitionKind,
    /// Sample indices into the parent dataset, one sorted list per client.
    pub client_indices: Vec<Vec<usize>>,
    /// hetero-label: the label set drawn for each client.
    pub labels_per_client: Option<Vec<Vec<usize>>>,
    /// hetero-dir: `proportions[k][j]`, the drawn share of class `k` for
    /// client `j`.
    pub proportions: Option<Vec<Vec<f64>>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            PartitionKind::HeteroDir { alpha } => Some(alpha),
            PartitionKind::HeteroLabel { .. } => None,
        }
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Per-client label histograms against the parent dataset.
    pub fn label_histograms(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.client_indices
            .iter()
            .map(|idx| {
                let mut h = vec![0; ds.num_classes()];
                for &i in idx {
                    h[ds.label(i)] += 1;
                }
                h
            })
            .collect()
    }

    /// Number of distinct labels each client holds.
    pub fn distinct_labels(&self, ds: &Dataset) -> Vec<usize> {
        self.label_histograms(ds)
            .iter()
            .map(|h| h.iter().filter(|&&c| c > 0).count())
            .collect()
    }

    pub fn views<'a>(&self, ds: &'a Dataset) -> Vec<DatasetView<'a>> {
        self.client_indices
            .iter()
            .map(|idx| ds.select(idx.clone()))
            .collect()
    }
}

/// Symmetric Dirichlet(`alpha`) sample of dimension `k`.
///
/// Each component is drawn as `Gamma(alpha + 1) * U^(1/alpha)` in log space
/// and normalized with log-sum-exp, so very small `alpha` (where plain gamma
/// draws underflow to zero) still produces a valid simplex point.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    assert!(alpha > 0.0 && k > 0);
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    logs.iter().map(|l| (l - max).exp() / sum).collect()
}

/// Integer counts summing to `total` closest to `props * total`: floors
/// first, then one extra unit to the largest remainders (lowest index first
/// on ties).
pub fn largest_remainder_counts(props: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = props.iter().sum();
    let exact: Vec<f64> = props.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Draws per-client label sets until their union covers every class.
fn draw_label_sets<R: Rng>(classes: usize, clients: usize, rng: &mut R) -> Option<Vec<Vec<usize>>> {
    for _ in 0..LABEL_RETRIES {
        let sets: Vec<Vec<usize>> = (0..clients)
            .map(|_| {
                let size = rng.gen_range(MIN_LABELS..=MAX_LABELS);
                let mut s = index::sample(rng, classes, size).into_vec();
                s.sort_unstable();
                s
            })
            .collect();
        let mut covered = vec![false; classes];
        for s in &sets {
            for &c in s {
                covered[c] = true;
            }
        }
        if covered.iter().all(|&c| c) {
            return Some(sets);
        }
    }
    None
}

/// `hetero-label` partition of `ds` over `clients` clients.
pub fn partition_hetero_label(
    ds: &Dataset,
    clients: usize,
    seed: u64,
    disjoint: bool,
) -> Result<PartitionPlan> {
    if clients < 2 {
        return Err(Error::InvalidConfig("hetero-label needs at least 2 clients".into()));
    }
    if ds.num_classes() < MAX_LABELS {
        return Err(Error::InvalidConfig(format!(
            "hetero-label needs at least {MAX_LABELS} classes, dataset has {}",
            ds.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = ds.indices_by_class();
    let sets = draw_label_sets(ds.num_classes(), clients, &mut rng).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "no label assignment covering all classes after {LABEL_RETRIES} draws"
        ))
    })?;

    let mut client_indices = vec![Vec::new(); clients];
    for (label, members) in by_class.iter().enumerate() {
        let holders: Vec<usize> = (0..clients).filter(|&j| sets[j].contains(&label)).collect();
        if disjoint {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let counts = largest_remainder_counts(&vec![1.0; holders.len()], shuffled.len());
            let mut start = 0;
            for (&j, n) in holders.iter().zip(counts) {
                client_indices[j].extend_from_slice(&shuffled[start..start + n]);
                start += n;
            }
        } else {
            for &j in &holders {
                client_indices[j].extend_from_slice(members);
            }
        }
    }
    for idx in &mut client_indices {
        idx.sort_unstable();
    }
    if let Some(j) = client_indices.iter().position(Vec::is_empty) {
        return Err(Error::InvalidConfig(format!(
            "client {j} received no samples; dataset lacks its labels {:?}",
            sets[j]
        )));
    }
    Ok(PartitionPlan {
        kind: PartitionKind::HeteroLabel { disjoint },
        client_indices,
        labels_per_client: Some(sets),
        proportions: None,
    })
}

/// `hetero-dir` partition: a set partition of `ds` over `clients` clients.
pub fn partition_hetero_dir(ds: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if clients < 2 {
        return Err(Error::InvalidConfig("hetero-dir needs at least 2 clients".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = ds.indices_by_class();
    for attempt in 0..DIR_RETRIES {
        let mut client_indices = vec![Vec::new(); clients];
        let mut proportions = Vec::with_capacity(by_class.len());
        for members in &by_class {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let p = sample_dirichlet(alpha, clients, &mut rng);
            let counts = largest_remainder_counts(&p, shuffled.len());
            let mut start = 0;
            for (j, n) in counts.into_iter().enumerate() {
                client_indices[j].extend_from_slice(&shuffled[start..start + n]);
                start += n;
            }
            proportions.push(p);
        }
        if client_indices.iter().all(|c| !c.is_empty()) {
            if attempt > 0 {
                log::debug!("hetero-dir: accepted draw after {attempt} empty-client retries");
            }
            for idx in &mut client_indices {
                idx.sort_unstable();
            }
            return Ok(PartitionPlan {
                kind: PartitionKind::HeteroDir { alpha },
                client_indices,
                labels_per_client: None,
                proportions: Some(proportions),
            });
        }
    }
    Err(Error::InvalidConfig(format!(
        "hetero-dir left a client empty in all {DIR_RETRIES} draws (alpha {alpha}, {clients} clients)"
    )))
}
