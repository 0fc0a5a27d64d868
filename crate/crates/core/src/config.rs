//! Experiment description shared by training, probing and analysis.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Cosine,
    Salient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "simple_cnn")]
    SimpleCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Knn,
    Linear,
    Mlp,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(LossKind { Mse => "mse", Cosine => "cosine", Salient => "salient" });
str_enum!(OptimizerKind { Sgd => "sgd", Adam => "adam", Adamw => "adamw" });
str_enum!(ArchId { SimpleCnn => "simple_cnn" });
str_enum!(ProbeKind { Knn => "knn", Linear => "linear", Mlp => "mlp" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub knn_k: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
    pub mlp_hidden: usize,
    /// Cap on the number of training images used to fit a probe.
    pub fit_subset: Option<usize>,
    /// Cap on the number of test images a probe is scored on.
    pub test_subset: Option<usize>,
    /// Probes run by the periodic evaluation hook.
    pub eval_probes: Vec<ProbeKind>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            knn_k: 5,
            probe_epochs: 20,
            probe_lr: 0.01,
            probe_batch_size: 256,
            mlp_hidden: 512,
            fit_subset: None,
            test_subset: None,
            eval_probes: vec![ProbeKind::Linear],
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k < 1 {
            return Err(invalid("knn_k must be >= 1"));
        }
        if self.probe_epochs < 1 {
            return Err(invalid("probe_epochs must be >= 1"));
        }
        if !(self.probe_lr > 0.0 && self.probe_lr.is_finite()) {
            return Err(invalid("probe_lr must be a positive finite number"));
        }
        if self.probe_batch_size < 1 {
            return Err(invalid("probe_batch_size must be >= 1"));
        }
        if self.mlp_hidden < 1 {
            return Err(invalid("mlp_hidden must be >= 1"));
        }
        if self.fit_subset == Some(0) || self.test_subset == Some(0) {
            return Err(invalid("probe subsets must be >= 1 when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub num_peers: usize,
    pub num_teachers: usize,
    pub loss_kind: LossKind,
    pub optimizer_kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub arch_id: ArchId,
    pub master_seed: u64,
    /// Run the probe hook every this many batches; 0 disables it.
    pub eval_every_batches: usize,
    pub probe_config: ProbeConfig,
    pub dataset_dir: String,
    pub output_dir: String,
    /// Keep only the first K training images (canonical order) before shuffling.
    pub train_subset_size: Option<usize>,
}

impl ExperimentConfig {
    pub const DEFAULT_NUM_PEERS: usize = 16;
    pub const DEFAULT_NUM_TEACHERS: usize = 1;
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-8;
    pub const DEFAULT_BATCH_SIZE: usize = 512;
    pub const DEFAULT_EPOCHS: usize = 10;
    pub const DEFAULT_OUTPUT_DIR: &'static str = "runs/default";

    /// Defaults for every field; `dataset_dir` has no default and must be set.
    pub fn with_dataset_dir(dataset_dir: impl Into<String>) -> Self {
        Self {
            num_peers: Self::DEFAULT_NUM_PEERS,
            num_teachers: Self::DEFAULT_NUM_TEACHERS,
            loss_kind: LossKind::Salient,
            optimizer_kind: OptimizerKind::Adam,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            epochs: Self::DEFAULT_EPOCHS,
            arch_id: ArchId::SimpleCnn,
            master_seed: 0,
            eval_every_batches: 0,
            probe_config: ProbeConfig::default(),
            dataset_dir: dataset_dir.into(),
            output_dir: Self::DEFAULT_OUTPUT_DIR.to_string(),
            train_subset_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_peers < 2 {
            return Err(invalid("num_peers must be >= 2"));
        }
        if self.num_teachers < 1 {
            return Err(invalid("num_teachers must be >= 1"));
        }
        if self.num_teachers + 1 > self.num_peers {
            return Err(invalid(&format!(
                "num_teachers + 1 <= num_peers violated ({} + 1 > {})",
                self.num_teachers, self.num_peers
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(invalid("epochs must be >= 1"));
        }
        if self.dataset_dir.is_empty() {
            return Err(invalid("dataset_dir is required"));
        }
        if self.train_subset_size == Some(0) {
            return Err(invalid("train_subset_size must be >= 1 when set"));
        }
        self.probe_config.validate()
    }
}

fn invalid(msg: &str) -> Error {
    Error::InvalidConfig(msg.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headline_settings_validate() {
        let mut cfg = ExperimentConfig::with_dataset_dir("data");
        cfg.num_peers = 16;
        cfg.num_teachers = 1;
        cfg.learning_rate = 1e-8;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn too_many_teachers_rejected() {
        let mut cfg = ExperimentConfig::with_dataset_dir("data");
        cfg.num_peers = 2;
        cfg.num_teachers = 2;
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(ref m) if m.contains("num_teachers + 1")));
    }

    #[test]
    fn zero_learning_rate_rejected() {
        let mut cfg = ExperimentConfig::with_dataset_dir("data");
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_hidden_width_rejected() {
        let mut p = ProbeConfig::default();
        p.mlp_hidden = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn enum_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), *k);
        }
        assert_eq!("simple_cnn".parse::<ArchId>().unwrap(), ArchId::SimpleCnn);
        assert!("resnet18".parse::<ArchId>().is_err());
    }
}
