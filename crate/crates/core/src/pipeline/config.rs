use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CnvError, Result};
use crate::hypothesis::{PermutationOptions, TestVariant};
use crate::matrix::DEFAULT_BIN_SIZE;
use crate::merge::MergeConfig;
use crate::mixture::{FitOptions, PriorSpec};

/// Settings of the label-permutation reference for the summed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub n_perm: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        let d = PermutationOptions::default();
        Self {
            n_perm: d.n_perm,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl PermutationConfig {
    pub fn with_seed(&self, seed: u64) -> PermutationOptions {
        PermutationOptions {
            n_perm: self.n_perm,
            seed,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bin_size: usize,
    /// p-value threshold for calling a bin or segment significant.
    pub significance: f64,
    pub workers: usize,
    pub seed: u64,
    /// Variants run per bin by `test`.
    pub test_variants: Vec<TestVariant>,
    /// Variants run per final segment by `merge`.
    pub merge_variants: Vec<TestVariant>,
    pub prior: PriorSpec,
    pub em: FitOptions,
    pub merge: MergeConfig,
    pub permutation: PermutationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bin_size: DEFAULT_BIN_SIZE,
            significance: 0.05,
            workers: 1,
            seed: 0,
            test_variants: vec![TestVariant::Full, TestVariant::Deletion, TestVariant::Duplication],
            merge_variants: TestVariant::ALL.to_vec(),
            prior: PriorSpec::default(),
            em: FitOptions::default(),
            merge: MergeConfig::default(),
            permutation: PermutationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CnvError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CnvError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_size == 0 {
            return Err(CnvError::config("bin_size", "must be at least 1"));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(CnvError::config("significance", "must lie in (0, 1)"));
        }
        if self.workers == 0 {
            return Err(CnvError::config("workers", "must be at least 1"));
        }
        if self.test_variants.is_empty() {
            return Err(CnvError::config("test_variants", "must not be empty"));
        }
        if self.test_variants.contains(&TestVariant::Summed) {
            return Err(CnvError::config(
                "test_variants",
                "the summed statistic applies to merged segments only",
            ));
        }
        if self.merge_variants.is_empty() {
            return Err(CnvError::config("merge_variants", "must not be empty"));
        }
        self.prior.validate()?;
        if self.em.max_iter == 0 {
            return Err(CnvError::config("em.max_iter", "must be at least 1"));
        }
        if !(self.em.tol > 0.0) {
            return Err(CnvError::config("em.tol", "must be positive"));
        }
        if !(self.em.variance_floor > 0.0) {
            return Err(CnvError::config("em.variance_floor", "must be positive"));
        }
        self.merge.validate()?;
        if !(self.permutation.tol > 0.0) || self.permutation.max_iter == 0 {
            return Err(CnvError::config("permutation", "tol and max_iter must be positive"));
        }
        Ok(())
    }
}
