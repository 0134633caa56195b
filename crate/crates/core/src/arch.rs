//! Accelerator parameters shared by the planner and the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::CostModel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchError {
    #[error("invalid architecture: {0}")]
    Invalid(String),
    #[error("architecture file: {0}")]
    Parse(String),
}

/// Accelerator geometry. Buffer depths are rows of `p_ca` words per bank;
/// each buffer has `p_ca` banks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub n_pe: usize,
    pub p_ca: usize,
    pub vb_bank_depth: usize,
    pub wb_bank_depth: usize,
    pub rb_bank_depth: usize,
    pub external_memory_bytes: u64,
    /// Bytes per compute-clock cycle.
    pub mem_bandwidth: u64,
    /// Compute clock over buffer clock. Informational.
    pub clock_ratio: u32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            n_pe: 7,
            p_ca: 16,
            vb_bank_depth: 512,
            wb_bank_depth: 512,
            rb_bank_depth: 512,
            external_memory_bytes: 4 << 30,
            mem_bandwidth: 128,
            clock_ratio: 2,
        }
    }
}

impl ArchConfig {
    /// Same geometry with every buffer `depth` rows deep.
    pub fn with_bank_depth(mut self, depth: usize) -> Self {
        self.vb_bank_depth = depth;
        self.wb_bank_depth = depth;
        self.rb_bank_depth = depth;
        self
    }

    pub fn with_n_pe(mut self, n: usize) -> Self {
        self.n_pe = n;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |m: &str| Err(ArchError::Invalid(m.to_string()));
        if self.n_pe == 0 {
            return bad("n_pe must be at least 1");
        }
        if self.p_ca < 2 || !self.p_ca.is_multiple_of(2) || self.p_ca > u16::MAX as usize {
            return bad("p_ca must be even and at least 2");
        }
        if self.mem_bandwidth == 0 {
            return bad("mem_bandwidth must be positive");
        }
        if self.vb_bank_depth == 0 || self.wb_bank_depth == 0 || self.rb_bank_depth == 0 {
            return bad("bank depths must be positive");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ArchError> {
        let a: Self = serde_json::from_str(text).map_err(|e| ArchError::Parse(e.to_string()))?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch serializes")
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel::new(self.p_ca as u32).expect("validated p_ca")
    }

    /// Capacities in fp16 words of VB, WB and RB.
    pub fn capacities(&self) -> [usize; 3] {
        let row = self.p_ca * self.p_ca;
        [self.vb_bank_depth * row, self.wb_bank_depth * row, self.rb_bank_depth * row]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_json() {
        let a = ArchConfig::default();
        assert!(a.validate().is_ok());
        assert_eq!(ArchConfig::from_json("{}").unwrap(), a);
        let b = ArchConfig::from_json(r#"{"n_pe": 2, "p_ca": 8}"#).unwrap();
        assert_eq!((b.n_pe, b.p_ca, b.mem_bandwidth), (2, 8, 128));
        assert_eq!(ArchConfig::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ArchConfig::from_json(r#"{"n_pe": 0}"#).is_err());
        assert!(ArchConfig::from_json(r#"{"p_ca": 3}"#).is_err());
        assert!(ArchConfig::from_json(r#"{"mem_bandwidth": 0}"#).is_err());
        assert!(ArchConfig::from_json(r#"{"colour": 1}"#).is_err());
    }
}
