//! Append-only `(step, peer, metric, value)` log backing every table and plot.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeerTag {
    Peer(usize),
    Ensemble,
}

impl fmt::Display for PeerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeerTag::Peer(i) => write!(f, "{i}"),
            PeerTag::Ensemble => f.write_str("ensemble"),
        }
    }
}

impl FromStr for PeerTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ensemble" {
            return Ok(PeerTag::Ensemble);
        }
        s.parse()
            .map(PeerTag::Peer)
            .map_err(|_| Error::InvalidConfig(alloc::format!("bad peer id `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub global_step: u64,
    pub peer: PeerTag,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str = "step,peer_id,metric,value";

    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Steps must not go backwards.
    pub fn push(&mut self, global_step: u64, peer: PeerTag, metric: &str, value: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if global_step < last.global_step {
                return Err(Error::InvalidConfig(alloc::format!(
                    "metrics log step went backwards ({} after {})",
                    global_step,
                    last.global_step
                )));
            }
        }
        self.rows.push(MetricRow {
            global_step,
            peer,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: &MetricsLog) -> Result<()> {
        for r in &other.rows {
            self.push(r.global_step, r.peer, &r.metric, r.value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_are_non_decreasing() {
        let mut log = MetricsLog::new();
        log.push(0, PeerTag::Peer(0), "loss", 1.0).unwrap();
        log.push(0, PeerTag::Peer(1), "loss", 1.0).unwrap();
        log.push(5, PeerTag::Ensemble, "linear_accuracy", 30.0).unwrap();
        assert!(log.push(4, PeerTag::Peer(0), "loss", 1.0).is_err());
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn peer_tag_parses() {
        assert_eq!("ensemble".parse::<PeerTag>().unwrap(), PeerTag::Ensemble);
        assert_eq!("7".parse::<PeerTag>().unwrap(), PeerTag::Peer(7));
        assert!("x".parse::<PeerTag>().is_err());
    }
}
