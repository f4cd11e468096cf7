//! Penalized five-component Gaussian mixtures over the probes of one bin.
//!
//! Every sample of a bin is a vector of `p` log2 ratios. Component `k` (copy
//! number state `k`, 0..=4) has a per-probe mean vector and a per-probe
//! variance vector; the isotropic variant keeps both constant across probes.
//! Component means carry a Gaussian prior centred on an anchor `tau[k]` whose
//! variance shrinks with `N * p`, so clusters absent from the data collapse to
//! zero weight with their mean pinned at the anchor.

mod em;
mod init;

use serde::{Deserialize, Serialize};

pub use em::{
    e_step, fit, fit_from, log_prior, m_step, m_step_anisotropic, m_step_isotropic, mixture_loglik,
    penalized_loglik, per_sample_loglik,
};
pub use init::{assign_states, group_bin_means, init_params, state_interval, Grouping, Initialization};

use crate::error::{CnvError, Result};
use crate::matrix::BinData;

/// Number of copy-number states.
pub const K: usize = 5;

/// Copy-number state of the normal (two-copy) cluster.
pub const NORMAL_STATE: usize = 2;

/// Default prior anchors for CN = 0..4.
pub const DEFAULT_TAU: [f64; K] = [-1.3, -0.5, 0.0, 0.4, 0.73];

/// Lower bound on every variance entry, in squared log2-ratio units.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Clusters whose total responsibility falls below this are treated as empty.
pub(crate) const MIN_CLUSTER_MASS: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    /// One mean and one variance per cluster, shared by all probes of the bin.
    Isotropic,
    /// Per-probe means and variances.
    #[default]
    Anisotropic,
}

/// Growth function `m` in the prior variance `c / m(N * p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "exponent")]
pub enum Schedule {
    /// `m(x) = ln(1 + x)`.
    #[default]
    Log,
    /// `m(x) = sqrt(x)`.
    Sqrt,
    /// `m(x) = x^e` with `0 < e < 1`.
    Power(f64),
    /// `m(x) = 1`: the scale is used as the variance directly.
    Constant,
}

impl Schedule {
    pub fn growth(&self, x: f64) -> f64 {
        match *self {
            Schedule::Log => x.ln_1p(),
            Schedule::Sqrt => x.sqrt(),
            Schedule::Power(e) => x.powf(e),
            Schedule::Constant => 1.0,
        }
    }
}

/// Empirical-Bayes prior on the component means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub tau: [f64; K],
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            schedule: Schedule::Log,
            scale: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.windows(2).all(|w| w[0] < w[1]) || self.tau.iter().any(|t| !t.is_finite()) {
            return Err(CnvError::config("prior.tau", "anchors must be finite and strictly increasing"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(CnvError::config("prior.scale", "must be positive"));
        }
        if let Schedule::Power(e) = self.schedule {
            if !(e > 0.0 && e < 1.0) {
                return Err(CnvError::config("prior.schedule", "power exponent must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Prior variance of every component mean for `n_samples` samples over `p` probes.
    pub fn variance(&self, n_samples: usize, p: usize) -> f64 {
        let x = (n_samples * p) as f64;
        self.scale / self.schedule.growth(x)
    }

    /// Same anchors with the variance fixed at `variance` regardless of `N * p`.
    pub fn fixed(&self, variance: f64) -> Self {
        Self {
            tau: self.tau,
            schedule: Schedule::Constant,
            scale: variance,
        }
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        Self { scale, ..*self }
    }
}

/// Free-standing form of [`PriorSpec::variance`].
pub fn prior_variance(n_samples: usize, p: usize, schedule: Schedule, scale: f64) -> f64 {
    PriorSpec {
        tau: DEFAULT_TAU,
        schedule,
        scale,
    }
    .variance(n_samples, p)
}

/// Fitted or candidate parameters of the five-component mixture on one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub alpha: [f64; K],
    pub mu: [Vec<f64>; K],
    pub sigma2: [Vec<f64>; K],
    pub covariance: Covariance,
}

impl MixtureModel {
    /// Model with constant per-cluster parameters over `p` probes.
    pub fn isotropic(alpha: [f64; K], mu: [f64; K], sigma2: [f64; K], p: usize) -> Self {
        Self {
            alpha,
            mu: mu.map(|m| vec![m; p]),
            sigma2: sigma2.map(|s| vec![s; p]),
            covariance: Covariance::Isotropic,
        }
    }

    pub fn len(&self) -> usize {
        self.mu[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.alpha[k] > 0.0
    }

    pub fn active_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..K).filter(|&k| self.is_active(k))
    }

    pub fn with_alpha(&self, alpha: [f64; K]) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    /// Parameters restricted to local probes `[from, to)`; proportions are kept.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(CnvError::SliceMismatch {
                start: from,
                end: to,
                len: self.len(),
            });
        }
        Ok(Self {
            alpha: self.alpha,
            mu: std::array::from_fn(|k| self.mu[k][from..to].to_vec()),
            sigma2: std::array::from_fn(|k| self.sigma2[k][from..to].to_vec()),
            covariance: self.covariance,
        })
    }

    /// Joins two adjacent models into a starting point for a fit on the
    /// concatenated span. Proportions are averaged with weights `w_left`,
    /// `1 - w_left`.
    pub fn concat(left: &Self, right: &Self, w_left: f64) -> Self {
        let mut alpha = [0.0; K];
        for k in 0..K {
            alpha[k] = w_left * left.alpha[k] + (1.0 - w_left) * right.alpha[k];
        }
        let join = |a: &Vec<f64>, b: &Vec<f64>| {
            let mut v = a.clone();
            v.extend_from_slice(b);
            v
        };
        Self {
            alpha,
            mu: std::array::from_fn(|k| join(&left.mu[k], &right.mu[k])),
            sigma2: std::array::from_fn(|k| join(&left.sigma2[k], &right.sigma2[k])),
            covariance: Covariance::Anisotropic,
        }
    }

    /// Log density of each component at every sample of `data`, one row per
    /// sample. Components with zero weight get `-inf` unless `all` is set.
    pub fn component_log_densities(&self, data: &BinData<'_>, all: bool) -> Vec<[f64; K]> {
        let p = self.len();
        assert_eq!(p, data.len(), "model length does not match the bin");
        let comps: Vec<Option<(f64, Vec<f64>)>> = (0..K)
            .map(|k| {
                (all || self.is_active(k)).then(|| {
                    let inv: Vec<f64> = self.sigma2[k].iter().map(|s| 1.0 / s).collect();
                    let norm = -0.5 * self.sigma2[k].iter().map(|s| LN_2PI + s.ln()).sum::<f64>();
                    (norm, inv)
                })
            })
            .collect();
        data.rows()
            .map(|x| {
                let mut out = [f64::NEG_INFINITY; K];
                for (k, comp) in comps.iter().enumerate() {
                    if let Some((norm, inv)) = comp {
                        let mu = &self.mu[k];
                        let mut q = 0.0;
                        for j in 0..p {
                            let d = x[j] - mu[j];
                            q += d * d * inv[j];
                        }
                        out[k] = norm - 0.5 * q;
                    }
                }
                out
            })
            .collect()
    }

    pub fn check_invariants(&self, floor: f64) -> bool {
        let sum: f64 = self.alpha.iter().sum();
        (sum - 1.0).abs() < 1e-10
            && self.alpha.iter().all(|a| (0.0..=1.0).contains(a))
            && self.sigma2.iter().flatten().all(|&s| s >= floor)
            && self.mu.iter().all(|m| m.len() == self.len())
    }
}

/// Posterior state probabilities, one row of five per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub rows: Vec<[f64; K]>,
}

impl Responsibilities {
    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    /// Total responsibility of each cluster.
    pub fn mass(&self) -> [f64; K] {
        let mut m = [0.0; K];
        for r in &self.rows {
            for k in 0..K {
                m[k] += r[k];
            }
        }
        m
    }

    /// Most probable state of each sample.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| {
                (0..K)
                    .max_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a)))
                    .unwrap()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub covariance: Covariance,
    pub variance_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            covariance: Covariance::Anisotropic,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

impl FitOptions {
    pub fn isotropic() -> Self {
        Self {
            covariance: Covariance::Isotropic,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    pub responsibilities: Responsibilities,
    pub penalized_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective before each M-step, ending with the final value.
    pub trace: Vec<f64>,
    /// All observations were identical; the fit fell back to one cluster.
    pub degenerate: bool,
}

pub(crate) fn log_sum_exp(v: &[f64; K]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn log_gaussian(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}
