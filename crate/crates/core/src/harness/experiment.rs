use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DatasetKind, ExperimentConfig, PartitionName};
use super::demo::{DEMO_TEST, DEMO_TRAIN};
use super::record::ResultRecord;
use crate::data::{
    gen_diamond2d, load_mnist_dir, partition_hetero_dir, partition_hetero_label, Dataset,
    DatasetView, MnistFiles, PartitionPlan, Side,
};
use crate::fusion::{
    ams_select, fuse_fedavg, write_disturbing_csv, DisturbingMatrix, FusionMethod,
    GlobalBlockModel,
};
use crate::nn::io::save_model;
use crate::nn::{argmax, init_model, softmax, train, train_from, Fnv1a, Matrix, ModelWeights, Predictor};
use crate::{Error, Result};

/// Environment variable naming the directory with the four MNIST IDX files.
pub const DATA_DIR_ENV: &str = "FUSELAB_DATA_DIR";

/// Offset added to the trial seed for shared initialization draws.
const INIT_SEED_OFFSET: u64 = 500;

/// `$FUSELAB_DATA_DIR` if set, else `./data/mnist`, else `data/mnist` at the
/// workspace root.
pub fn mnist_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let local = PathBuf::from("data/mnist");
    if MnistFiles::in_dir(&local).exist() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Loads `(train, test)` from [`mnist_dir`].
pub fn load_default_mnist() -> Result<(Dataset, Dataset)> {
    load_mnist_dir(mnist_dir())
}

/// Optional artifact outputs of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for local and fused model files.
    pub models_out: Option<PathBuf>,
    /// Directory for per-trial disturbing-matrix CSVs.
    pub disturbing_out: Option<PathBuf>,
    /// Test samples exported per trial when `disturbing_out` is set.
    pub disturbing_samples: usize,
}

/// Client training data for one trial.
struct TrialData<'a> {
    clients: Vec<DatasetView<'a>>,
    test: &'a Dataset,
    partition_hash: u64,
}

fn partition_mnist(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<PartitionPlan> {
    match cfg.partition {
        PartitionName::HeteroLabel => partition_hetero_label(train, cfg.clients, seed, cfg.disjoint_labels),
        PartitionName::HeteroDir => {
            let alpha = cfg.alpha.ok_or_else(|| Error::InvalidConfig("hetero_dir needs alpha".into()))?;
            partition_hetero_dir(train, cfg.clients, alpha, seed)
        }
    }
}

/// Layer widths of client `j`.
pub fn client_widths(cfg: &ExperimentConfig, j: usize, input: usize, classes: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(cfg.hidden_width, cfg.depth_of(j)));
    w.push(classes);
    w
}

/// Trains the `J` local models of one trial. With `shared_init` every client
/// of a given depth starts from the same draw; client `j` shuffles with seed
/// `trial_seed + 1 + j`.
pub fn train_clients(
    cfg: &ExperimentConfig,
    clients: &[DatasetView<'_>],
    trial_seed: u64,
) -> Result<Vec<ModelWeights>> {
    clients
        .par_iter()
        .enumerate()
        .map(|(j, view)| {
            let widths = client_widths(cfg, j, view.input_dim(), view.num_classes());
            let mut tc = cfg.train;
            tc.seed = trial_seed.wrapping_add(1 + j as u64);
            let started = Instant::now();
            let model = if cfg.shared_init {
                let init_seed = trial_seed
                    .wrapping_add(INIT_SEED_OFFSET)
                    .wrapping_add(cfg.depth_of(j) as u64);
                train_from(init_model(&widths, cfg.activation, init_seed)?, view, &tc)?
            } else {
                train(view, &widths, cfg.activation, &tc)?
            };
            log::info!(
                "client {j}: {} samples, depth {}, trained in {:.1}s",
                view.len(),
                cfg.depth_of(j),
                started.elapsed().as_secs_f64()
            );
            Ok(model)
        })
        .collect()
}

/// Per-sample predictions from a fusion rule applied to cached logit tables.
fn predict_from_tables(method: FusionMethod, tables: &[Matrix], n: usize) -> Result<Vec<usize>> {
    (0..n)
        .map(|i| {
            let m = DisturbingMatrix::from_tables(tables, i)?;
            let probs = match method {
                FusionMethod::AmsTop1 | FusionMethod::AmsCross => softmax(&m.column(ams_select(&m))),
                FusionMethod::AmsTopK(k) => softmax(&m.top_k_logits(k)?),
                FusionMethod::AmsFull => softmax(&m.top_k_logits(m.num_models())?),
                FusionMethod::EnsembleUniform => m.ensemble_probs(),
                FusionMethod::ConcatDirect | FusionMethod::FedAvg => {
                    unreachable!("parameter-space methods build a model")
                }
            };
            Ok(argmax(&probs))
        })
        .collect()
}

fn accuracy_of(preds: &[usize], test: &Dataset) -> f64 {
    let hits = preds.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    hits as f64 / test.len() as f64
}

/// Builds the fused model for the parameter-space methods.
pub fn fused_model(
    cfg: &ExperimentConfig,
    method: FusionMethod,
    models: &[ModelWeights],
    sizes: &[usize],
) -> Result<Option<ModelWeights>> {
    match method {
        FusionMethod::ConcatDirect => Ok(Some(GlobalBlockModel::build(models)?.to_summed_model()?)),
        FusionMethod::FedAvg => Ok(Some(fuse_fedavg(models, sizes, cfg.fedavg_weighting.into())?)),
        _ => Ok(None),
    }
}

fn checksums(models: &[ModelWeights]) -> Vec<u64> {
    models.iter().map(ModelWeights::checksum).collect()
}

/// Test accuracy of every configured method on one set of trained models.
pub fn evaluate_methods(
    cfg: &ExperimentConfig,
    models: &[ModelWeights],
    sizes: &[usize],
    test: &Dataset,
) -> Result<Vec<(FusionMethod, f64, f64)>> {
    let reference = checksums(models);
    let tables = models
        .par_iter()
        .map(|m| m.logits_batch(test.features()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let started = Instant::now();
        let acc = match fused_model(cfg, method, models, sizes)? {
            Some(fused) => fused.accuracy(test),
            None => accuracy_of(&predict_from_tables(method, &tables, test.len())?, test),
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        if checksums(models) != reference {
            return Err(Error::InvalidModel(format!("local models changed while evaluating {method}")));
        }
        out.push((method, acc, wall_ms));
    }
    Ok(out)
}

fn write_artifacts(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    trial: usize,
    models: &[ModelWeights],
    sizes: &[usize],
    test: &Dataset,
) -> Result<()> {
    if let Some(dir) = &opts.models_out {
        std::fs::create_dir_all(dir)?;
        for (j, m) in models.iter().enumerate() {
            save_model(dir.join(format!("trial{trial}_client{j}.flw")), m, &format!("local{j}"))?;
        }
        for &method in &cfg.methods {
            if let Some(fused) = fused_model(cfg, method, models, sizes)? {
                let tag = method.to_string();
                save_model(dir.join(format!("trial{trial}_{tag}.flw")), &fused, &tag)?;
            }
        }
    }
    if let Some(dir) = &opts.disturbing_out {
        std::fs::create_dir_all(dir)?;
        let n = opts.disturbing_samples.min(test.len());
        let xs = Matrix::from_vec(
            n,
            test.input_dim(),
            test.features().as_slice()[..n * test.input_dim()].to_vec(),
        );
        let tables = models.iter().map(|m| m.logits_batch(&xs)).collect::<Result<Vec<_>>>()?;
        let mats = (0..n)
            .map(|i| DisturbingMatrix::from_tables(&tables, i))
            .collect::<Result<Vec<_>>>()?;
        let file = std::fs::File::create(dir.join(format!("disturbing_trial{trial}.csv")))?;
        write_disturbing_csv(std::io::BufWriter::new(file), &mats)?;
    }
    Ok(())
}

fn run_trial(
    cfg: &ExperimentConfig,
    trial: usize,
    data: TrialData<'_>,
    opts: &RunOptions,
) -> Result<Vec<ResultRecord>> {
    let seed = cfg.trial_seed(trial);
    let models = train_clients(cfg, &data.clients, seed)?;
    let sizes: Vec<usize> = data.clients.iter().map(DatasetView::len).collect();
    let results = evaluate_methods(cfg, &models, &sizes, data.test)?;
    if views_hash(&data.clients) != data.partition_hash {
        return Err(Error::InvalidModel("client partition changed during the trial".into()));
    }
    write_artifacts(cfg, opts, trial, &models, &sizes, data.test)?;
    Ok(results
        .into_iter()
        .map(|(method, accuracy, wall_ms)| {
            log::info!("trial {trial} {method}: {:.2}%", 100.0 * accuracy);
            ResultRecord {
                dataset: cfg.dataset,
                partition: cfg.partition,
                alpha: cfg.alpha,
                clients: cfg.clients,
                depth: cfg.depth_label(),
                method,
                trial,
                seed,
                accuracy,
                wall_ms,
            }
        })
        .collect())
}

fn views_hash(views: &[DatasetView<'_>]) -> u64 {
    let mut h = Fnv1a::default();
    for c in views {
        h.write_usize(c.len());
        for &i in c.indices() {
            h.write_usize(i);
        }
    }
    h.finish()
}

/// Runs every trial of `cfg`. `mnist` supplies `(train, test)` for MNIST
/// configs; diamond2d data is generated per trial.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    mnist: Option<&(Dataset, Dataset)>,
    opts: &RunOptions,
) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.trials * cfg.methods.len());
    for trial in 0..cfg.trials {
        let seed = cfg.trial_seed(trial);
        let trial_records = match cfg.dataset {
            DatasetKind::Mnist => {
                let (train_set, test) =
                    mnist.ok_or_else(|| Error::InvalidConfig("MNIST data not loaded".into()))?;
                let plan = partition_mnist(cfg, train_set, seed)?;
                let clients = plan.views(train_set);
                let partition_hash = views_hash(&clients);
                run_trial(cfg, trial, TrialData { clients, test, partition_hash }, opts)?
            }
            DatasetKind::Diamond2d => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (ltrain, ltest) = gen_diamond2d(Side::Left, DEMO_TRAIN, DEMO_TEST, rng.next_u64())?;
                let (rtrain, rtest) = gen_diamond2d(Side::Right, DEMO_TRAIN, DEMO_TEST, rng.next_u64())?;
                let test = ltest.concat(&rtest)?;
                let clients = vec![ltrain.view(), rtrain.view()];
                let partition_hash = views_hash(&clients);
                run_trial(cfg, trial, TrialData { clients, test: &test, partition_hash }, opts)?
            }
        };
        records.extend(trial_records);
    }
    Ok(records)
}

/// Loads MNIST when needed and runs every trial of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let data = match cfg.dataset {
        DatasetKind::Mnist => Some(load_default_mnist()?),
        DatasetKind::Diamond2d => None,
    };
    run_experiment_on(cfg, data.as_ref(), &RunOptions::default())
}

/// Runs `cfg` once per alpha with a hetero-dir partition; record count is
/// `alphas x methods x trials`.
pub fn run_alpha_sweep_on(
    cfg: &ExperimentConfig,
    alphas: &[f64],
    mnist: Option<&(Dataset, Dataset)>,
    opts: &RunOptions,
) -> Result<Vec<ResultRecord>> {
    if cfg.dataset != DatasetKind::Mnist {
        return Err(Error::InvalidConfig("alpha sweeps need dataset = \"mnist\"".into()));
    }
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("no alphas given".into()));
    }
    if alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConfig("alphas must be positive".into()));
    }
    if alphas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("alphas must be sorted ascending".into()));
    }
    let mut records = Vec::new();
    for &alpha in alphas {
        let mut c = cfg.clone();
        c.partition = PartitionName::HeteroDir;
        c.alpha = Some(alpha);
        log::info!("sweep: alpha {alpha}");
        records.extend(run_experiment_on(&c, mnist, opts)?);
    }
    Ok(records)
}

pub fn run_alpha_sweep(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<ResultRecord>> {
    let data = match cfg.dataset {
        DatasetKind::Mnist => Some(load_default_mnist()?),
        DatasetKind::Diamond2d => None,
    };
    run_alpha_sweep_on(cfg, alphas, data.as_ref(), &RunOptions::default())
}
