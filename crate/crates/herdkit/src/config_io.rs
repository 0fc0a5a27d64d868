//! Flat `key = value` TOML documents for [`ExperimentConfig`].
//!
//! Probe settings live at the top level next to the experiment fields. Unknown
//! keys are rejected; absent keys take their defaults, except `dataset_dir`.

use std::path::Path;

use herdkit_core::config::{ArchId, ExperimentConfig, LossKind, OptimizerKind, ProbeConfig, ProbeKind};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HerdError, Result};

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    num_peers: Option<usize>,
    num_teachers: Option<usize>,
    loss_kind: Option<LossKind>,
    optimizer_kind: Option<OptimizerKind>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    arch_id: Option<ArchId>,
    master_seed: Option<u64>,
    eval_every_batches: Option<usize>,
    dataset_dir: Option<String>,
    output_dir: Option<String>,
    train_subset_size: Option<usize>,
    knn_k: Option<usize>,
    probe_epochs: Option<usize>,
    probe_lr: Option<f64>,
    probe_batch_size: Option<usize>,
    mlp_hidden: Option<usize>,
    fit_subset: Option<usize>,
    test_subset: Option<usize>,
    eval_probes: Option<Vec<ProbeKind>>,
}

impl ConfigDocument {
    fn into_config(self) -> Result<ExperimentConfig> {
        let dataset_dir = self
            .dataset_dir
            .ok_or_else(|| herdkit_core::Error::InvalidConfig("dataset_dir is required".into()))?;
        let mut cfg = ExperimentConfig::with_dataset_dir(dataset_dir);
        let p = ProbeConfig::default();
        cfg.num_peers = self.num_peers.unwrap_or(cfg.num_peers);
        cfg.num_teachers = self.num_teachers.unwrap_or(cfg.num_teachers);
        cfg.loss_kind = self.loss_kind.unwrap_or(cfg.loss_kind);
        cfg.optimizer_kind = self.optimizer_kind.unwrap_or(cfg.optimizer_kind);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.arch_id = self.arch_id.unwrap_or(cfg.arch_id);
        cfg.master_seed = self.master_seed.unwrap_or(cfg.master_seed);
        cfg.eval_every_batches = self.eval_every_batches.unwrap_or(cfg.eval_every_batches);
        cfg.output_dir = self.output_dir.unwrap_or(cfg.output_dir);
        cfg.train_subset_size = self.train_subset_size;
        cfg.probe_config = ProbeConfig {
            knn_k: self.knn_k.unwrap_or(p.knn_k),
            probe_epochs: self.probe_epochs.unwrap_or(p.probe_epochs),
            probe_lr: self.probe_lr.unwrap_or(p.probe_lr),
            probe_batch_size: self.probe_batch_size.unwrap_or(p.probe_batch_size),
            mlp_hidden: self.mlp_hidden.unwrap_or(p.mlp_hidden),
            fit_subset: self.fit_subset,
            test_subset: self.test_subset,
            eval_probes: self.eval_probes.unwrap_or(p.eval_probes),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_config(cfg: &ExperimentConfig) -> Self {
        let p = &cfg.probe_config;
        Self {
            num_peers: Some(cfg.num_peers),
            num_teachers: Some(cfg.num_teachers),
            loss_kind: Some(cfg.loss_kind),
            optimizer_kind: Some(cfg.optimizer_kind),
            learning_rate: Some(cfg.learning_rate),
            batch_size: Some(cfg.batch_size),
            epochs: Some(cfg.epochs),
            arch_id: Some(cfg.arch_id),
            master_seed: Some(cfg.master_seed),
            eval_every_batches: Some(cfg.eval_every_batches),
            dataset_dir: Some(cfg.dataset_dir.clone()),
            output_dir: Some(cfg.output_dir.clone()),
            train_subset_size: cfg.train_subset_size,
            knn_k: Some(p.knn_k),
            probe_epochs: Some(p.probe_epochs),
            probe_lr: Some(p.probe_lr),
            probe_batch_size: Some(p.probe_batch_size),
            mlp_hidden: Some(p.mlp_hidden),
            fit_subset: p.fit_subset,
            test_subset: p.test_subset,
            eval_probes: Some(p.eval_probes.clone()),
        }
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| HerdError::ConfigParse(one_line(&e.to_string())))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn from_table(table: toml::Table) -> Result<ExperimentConfig> {
    let doc: ConfigDocument = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| HerdError::ConfigParse(one_line(&e.to_string())))?;
    doc.into_config()
}

/// Parses and validates a configuration document.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    from_table(parse_table(text)?)
}

/// Parses `text`, applies `key=value` overrides on top, then validates.
pub fn load_config_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = parse_table(text)?;
    for o in overrides {
        let (key, value) = parse_override(o)?;
        table.insert(key, value);
    }
    from_table(table)
}

pub fn load_config_file(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    load_config_with_overrides(&text, overrides)
}

/// `key=value`, where `value` is a TOML literal or else a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| HerdError::Usage(format!("override `{s}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(HerdError::Usage(format!("override `{s}` has an empty key")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Serializes every field so the document parses back to an equal config.
pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(&ConfigDocument::from_config(cfg)).expect("flat config document serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headline_document() {
        let cfg = load_config("dataset_dir = \"d\"\nnum_peers = 16\nnum_teachers = 1\nlearning_rate = 1e-8\n").unwrap();
        assert_eq!(cfg.num_peers, 16);
        assert_eq!(cfg.learning_rate, 1e-8);
        assert_eq!(cfg.probe_config.knn_k, 5);
    }

    #[test]
    fn invariant_violation_names_the_rule() {
        let err = load_config("dataset_dir = \"d\"\nnum_peers = 2\nnum_teachers = 2\n").unwrap_err();
        assert!(err.to_string().contains("num_teachers + 1 <= num_peers"), "{err}");
    }

    #[test]
    fn empty_document_needs_dataset_dir() {
        let err = load_config("").unwrap_err();
        assert!(err.to_string().contains("dataset_dir"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = load_config("dataset_dir = \"d\"\nteacher_ema = 0.99\n").unwrap_err();
        assert!(matches!(err, HerdError::ConfigParse(ref m) if m.contains("teacher_ema")), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let err = load_config("dataset_dir = \"d\"\nnum_peers = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = load_config_with_overrides(
            "dataset_dir = \"d\"\nlearning_rate = 1e-4\n",
            &["learning_rate=1e-8".into(), "loss_kind=mse".into(), "output_dir=/tmp/x y".into()],
        )
        .unwrap();
        assert_eq!(cfg.learning_rate, 1e-8);
        assert_eq!(cfg.loss_kind, LossKind::Mse);
        assert_eq!(cfg.output_dir, "/tmp/x y");
    }

    #[test]
    fn round_trip_defaults() {
        let cfg = ExperimentConfig::with_dataset_dir("data/cifar");
        assert_eq!(load_config(&to_toml(&cfg)).unwrap(), cfg);
    }
}
