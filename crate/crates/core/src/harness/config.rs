use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fusion::{FusionMethod, Weighting};
use crate::nn::{Activation, TrainConfig};
use crate::{Error, Result};

pub const MAX_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Two-client synthetic 2D task; the client split is the left/right side.
    Diamond2d,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionName {
    HeteroLabel,
    HeteroDir,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Diamond2d => "diamond2d",
            DatasetKind::Mnist => "mnist",
        }
    }
}

impl PartitionName {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionName::HeteroLabel => "hetero_label",
            PartitionName::HeteroDir => "hetero_dir",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedAvgWeighting {
    #[default]
    Uniform,
    BySamples,
}

impl From<FedAvgWeighting> for Weighting {
    fn from(w: FedAvgWeighting) -> Self {
        match w {
            FedAvgWeighting::Uniform => Weighting::Uniform,
            FedAvgWeighting::BySamples => Weighting::BySamples,
        }
    }
}

fn default_train() -> TrainConfig {
    TrainConfig::mnist(0)
}

fn default_hidden() -> usize {
    100
}

fn default_trials() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// One experiment setting, read from a TOML document such as
///
/// ```toml
/// dataset = "mnist"
/// partition = "hetero_dir"
/// alpha = 0.5
/// clients = 5
/// depth = 1
/// methods = ["ams_top1", "ams_full", "fedavg", "ensemble_uniform"]
/// trials = 5
/// base_seed = 0
/// shared_init = true
///
/// [train]
/// learning_rate = 0.001
/// decay_factor = 0.8
/// decay_period_epochs = 2
/// batch_size = 64
/// epochs = 40
/// l1_coefficient = 1e-7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub partition: PartitionName,
    /// Dirichlet concentration; required for `hetero_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub clients: usize,
    /// Hidden-layer count shared by every client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// `[lo, hi]`: client `j` gets depth `lo + (j mod (hi - lo + 1))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_range: Option<[usize; 2]>,
    pub methods: Vec<FusionMethod>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Train every client from one common initialization.
    #[serde(default = "default_true")]
    pub shared_init: bool,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
    #[serde(default)]
    pub activation: Activation,
    /// hetero-label only: split each label among its holders instead of
    /// giving every holder all of it.
    #[serde(default)]
    pub disjoint_labels: bool,
    #[serde(default)]
    pub fedavg_weighting: FedAvgWeighting,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Depth of client `j`.
    pub fn depth_of(&self, j: usize) -> usize {
        match (self.depth_range, self.depth) {
            (Some([lo, hi]), _) => lo + j % (hi - lo + 1),
            (None, Some(d)) => d,
            (None, None) => 1,
        }
    }

    pub fn is_cross_architecture(&self) -> bool {
        self.depth_range.is_some_and(|[lo, hi]| lo != hi)
    }

    /// Depth label used in result records: `"L"` or `"lo-hi"`.
    pub fn depth_label(&self) -> String {
        match self.depth_range {
            Some([lo, hi]) => format!("{lo}-{hi}"),
            None => self.depth_of(0).to_string(),
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(1000 * trial as u64)
    }

    /// Structural checks plus method/architecture compatibility, all before
    /// any training.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trials < 1 {
            return bad("trials must be >= 1".into());
        }
        if self.clients < 2 {
            return bad("clients must be >= 2".into());
        }
        if self.dataset == DatasetKind::Diamond2d && self.clients != 2 {
            return bad("diamond2d has exactly 2 clients".into());
        }
        if self.methods.is_empty() {
            return bad("methods is empty".into());
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be >= 1".into());
        }
        match (self.depth, self.depth_range) {
            (Some(_), Some(_)) => return bad("set depth or depth_range, not both".into()),
            (Some(d), None) if !(1..=MAX_DEPTH).contains(&d) => {
                return bad(format!("depth {d} outside [1, {MAX_DEPTH}]"))
            }
            (None, Some([lo, hi])) if !(1 <= lo && lo <= hi && hi <= MAX_DEPTH) => {
                return bad(format!("depth_range [{lo}, {hi}] outside [1, {MAX_DEPTH}]"))
            }
            _ => {}
        }
        match (self.partition, self.alpha) {
            (PartitionName::HeteroDir, None) if self.dataset == DatasetKind::Mnist => {
                return bad("hetero_dir needs alpha".into())
            }
            (_, Some(a)) if !(a > 0.0 && a.is_finite()) => {
                return bad(format!("alpha must be positive, got {a}"))
            }
            _ => {}
        }
        self.train.validate()?;
        let cross = self.is_cross_architecture();
        for &m in &self.methods {
            m.validate(self.clients)?;
            match m {
                FusionMethod::FedAvg if cross => {
                    return bad("fedavg needs identical architectures".into())
                }
                FusionMethod::FedAvg if !self.shared_init => {
                    return bad("fedavg needs shared_init = true".into())
                }
                FusionMethod::ConcatDirect | FusionMethod::AmsTop1 if cross => {
                    return bad(format!("{m} needs identical depths; use ams_cross"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
dataset = "mnist"
partition = "hetero_dir"
alpha = 0.5
clients = 5
depth = 1
methods = ["ams_top1", "ams_full", "fedavg", "ensemble_uniform"]
trials = 5
base_seed = 7
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.clients, 5);
        assert_eq!(cfg.alpha, Some(0.5));
        assert_eq!(cfg.methods[1], FusionMethod::AmsFull);
        assert!(cfg.shared_init);
        assert_eq!(cfg.train, TrainConfig::mnist(0));
        assert_eq!(cfg.hidden_width, 100);
        assert_eq!(cfg.trial_seed(2), 2007);
        assert_eq!(cfg.depth_label(), "1");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str(&format!("{BASE}\nlearning_rat = 0.1\n")).is_err());
        let train = "[train]\nlearning_rate = 0.1\ndecay_factor = 1.0\ndecay_period_epochs = 1\nbatch_size = 8\nepochs = 1\nl1_coefficient = 0.0\n";
        assert!(ExperimentConfig::from_toml_str(&format!("{BASE}\n{train}")).is_ok());
        assert!(ExperimentConfig::from_toml_str(&format!("{BASE}\n{train}epoch = 3\n")).is_err());
    }

    #[test]
    fn cross_architecture_depths() {
        let s = BASE
            .replace("depth = 1", "depth_range = [1, 5]")
            .replace("\"ams_top1\", \"ams_full\", \"fedavg\", ", "\"ams_cross\", ");
        let cfg = ExperimentConfig::from_toml_str(&s).unwrap();
        let depths: Vec<usize> = (0..7).map(|j| cfg.depth_of(j)).collect();
        assert_eq!(depths, vec![1, 2, 3, 4, 5, 1, 2]);
        assert_eq!(cfg.depth_label(), "1-5");
    }

    #[test]
    fn incompatible_methods_rejected() {
        let cross = BASE.replace("depth = 1", "depth_range = [1, 5]");
        assert!(ExperimentConfig::from_toml_str(&cross).is_err());
        let unshared = format!("{BASE}\nshared_init = false\n");
        assert!(ExperimentConfig::from_toml_str(&unshared).is_err());
        let big_k = BASE.replace("\"ams_top1\"", "\"ams_topk(6)\"");
        assert!(ExperimentConfig::from_toml_str(&big_k).is_err());
    }

    #[test]
    fn structural_limits() {
        for (from, to) in [
            ("trials = 5", "trials = 0"),
            ("clients = 5", "clients = 1"),
            ("depth = 1", "depth = 6"),
            ("alpha = 0.5", "alpha = -1.0"),
            ("alpha = 0.5\n", ""),
        ] {
            assert!(ExperimentConfig::from_toml_str(&BASE.replace(from, to)).is_err(), "{to}");
        }
    }
}
