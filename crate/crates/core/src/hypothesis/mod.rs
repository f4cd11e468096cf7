//! Conditional likelihood-ratio tests of equal copy-number proportions
//! between cases and controls.
//!
//! Means and variances come from separate per-group fits and stay fixed; only
//! the proportions are re-estimated under the null. Both hypotheses maximize
//! the proportions over the clusters active in either group's fit, so the
//! statistic is a proper nested likelihood ratio.

mod alpha;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use self::alpha::{accelerate, fit_pooled, fit_single, split, stack, Densities};
use crate::error::{CnvError, Result};
use crate::matrix::BinData;
use crate::mixture::{fit, mixture_loglik, FitOptions, FitResult, MixtureModel, PriorSpec, K, NORMAL_STATE};
use crate::stats::{derive_seed, p_value};

const ALPHA_TOL: f64 = 1e-10;
const ALPHA_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestVariant {
    /// All five proportions equal.
    Full,
    /// CN = 0 and CN = 1 proportions equal.
    Deletion,
    /// CN = 3 and CN = 4 proportions equal.
    Duplication,
    /// Summed per-bin statistic over a segment, permutation reference.
    Summed,
}

impl TestVariant {
    pub const ALL: [TestVariant; 4] = [Self::Full, Self::Deletion, Self::Duplication, Self::Summed];

    /// Clusters whose proportions are tied between groups under the null.
    pub fn pooled_states(self) -> &'static [usize] {
        match self {
            Self::Full | Self::Summed => &[0, 1, 2, 3, 4],
            Self::Deletion => &[0, 1],
            Self::Duplication => &[3, 4],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Deletion => "deletion",
            Self::Duplication => "duplication",
            Self::Summed => "summed",
        }
    }
}

impl std::fmt::Display for TestVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TestVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown test variant {s:?}"))
    }
}

/// Proportions of both groups under a null hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H0Fit {
    pub case: [f64; K],
    pub control: [f64; K],
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub variant: TestVariant,
    /// Log-likelihood difference H1 minus H0, clamped at zero.
    pub lambda: f64,
    /// Chi-square degrees of freedom; 0 for the permutation-based summed test.
    pub df: usize,
    pub p_value: f64,
    pub h1_case: MixtureModel,
    pub h1_control: MixtureModel,
    pub h0: H0Fit,
    pub converged: bool,
}

fn support(a: &MixtureModel, b: &MixtureModel) -> [bool; K] {
    std::array::from_fn(|k| a.is_active(k) || b.is_active(k))
}

/// Degrees of freedom for `variant` given the clusters active in either group.
///
/// Only active clusters carry free proportions, so the count of tied
/// parameters is capped by the size of the support minus one.
pub fn degrees_of_freedom(variant: TestVariant, support: &[bool; K]) -> usize {
    let n_active = support.iter().filter(|&&s| s).count();
    let free = n_active.saturating_sub(1);
    match variant {
        TestVariant::Full => free,
        TestVariant::Deletion | TestVariant::Duplication => {
            let tied = variant.pooled_states().iter().filter(|&&k| support[k]).count();
            tied.min(free)
        }
        TestVariant::Summed => 0,
    }
}

/// One constrained M-step for the proportions: clusters in the variant's
/// pooled set share their pooled mass, the rest keep each group's own
/// ratios rescaled so every group sums to one. A group with no mass outside
/// the pooled set keeps its previous ratios there.
pub fn h0_update(
    variant: TestVariant,
    mass_case: &[f64; K],
    mass_control: &[f64; K],
    prev_case: &[f64; K],
    prev_control: &[f64; K],
) -> ([f64; K], [f64; K]) {
    let n1: f64 = mass_case.iter().sum();
    let n2: f64 = mass_control.iter().sum();
    let pooled = variant.pooled_states();
    let is_pooled = |k: usize| pooled.contains(&k);
    let mut shared = [0.0; K];
    for &k in pooled {
        shared[k] = (mass_case[k] + mass_control[k]) / (n1 + n2);
    }
    let rest = (1.0 - shared.iter().sum::<f64>()).max(0.0);

    let ratios = |mass: &[f64; K], prev: &[f64; K], other: &[f64; K]| -> [f64; K] {
        for src in [mass, prev, other] {
            let total: f64 = (0..K).filter(|&k| !is_pooled(k)).map(|k| src[k]).sum();
            if total > 0.0 {
                return std::array::from_fn(|k| if is_pooled(k) { 0.0 } else { src[k] / total });
            }
        }
        std::array::from_fn(|k| if k == NORMAL_STATE && !is_pooled(k) { 1.0 } else { 0.0 })
    };
    let rc = ratios(mass_case, prev_case, prev_control);
    let rt = ratios(mass_control, prev_control, prev_case);
    let case = std::array::from_fn(|k| if is_pooled(k) { shared[k] } else { rest * rc[k] });
    let control = std::array::from_fn(|k| if is_pooled(k) { shared[k] } else { rest * rt[k] });
    (case, control)
}

struct BinDensities {
    case: Densities,
    control: Densities,
    support: [bool; K],
}

impl BinDensities {
    fn new(case: &BinData<'_>, control: &BinData<'_>, m_case: &MixtureModel, m_control: &MixtureModel) -> Self {
        let support = support(m_case, m_control);
        Self {
            case: Densities::new(m_case.component_log_densities(case, true), support, 1),
            control: Densities::new(m_control.component_log_densities(control, true), support, 1),
            support,
        }
    }

    /// Unconstrained proportions of one group over the shared support.
    fn polish(&self, dens: &Densities, alpha: &[f64; K]) -> alpha::AlphaRun<K> {
        let missing: Vec<usize> = (0..K).filter(|&k| self.support[k] && alpha[k] == 0.0).collect();
        let start = if missing.is_empty() {
            *alpha
        } else {
            let add = 0.01 / missing.len() as f64;
            std::array::from_fn(|k| if missing.contains(&k) { add } else { 0.99 * alpha[k] })
        };
        fit_single(dens, None, start, ALPHA_TOL, ALPHA_MAX_ITER)
    }

    fn h0(&self, variant: TestVariant, a_case: &[f64; K], a_control: &[f64; K]) -> H0Fit {
        let n1 = self.case.n_units() as f64;
        let n2 = self.control.n_units() as f64;
        let (c0, t0) = h0_update(
            variant,
            &a_case.map(|a| a * n1),
            &a_control.map(|a| a * n2),
            a_case,
            a_control,
        );
        let run = accelerate(
            stack(&c0, &t0),
            |s| {
                let (ac, at) = split(s);
                let mut mc = [0.0; K];
                let mut mt = [0.0; K];
                let ll = self.case.sweep(&ac, None, Some(&mut mc)) + self.control.sweep(&at, None, Some(&mut mt));
                let (nc, nt) = h0_update(variant, &mc, &mt, &ac, &at);
                (stack(&nc, &nt), ll)
            },
            ALPHA_TOL,
            ALPHA_MAX_ITER,
        );
        let (case, control) = split(&run.state);
        H0Fit {
            case,
            control,
            loglik: run.loglik,
            iterations: run.iterations,
            converged: run.converged,
        }
    }
}

fn h0_with_models(
    variant: TestVariant,
    case: &BinData<'_>,
    control: &BinData<'_>,
    case_model: &MixtureModel,
    control_model: &MixtureModel,
) -> H0Fit {
    BinDensities::new(case, control, case_model, control_model).h0(variant, &case_model.alpha, &control_model.alpha)
}

/// Null proportions when all five are tied, means and variances held at the
/// given per-group values.
pub fn fit_h0_shared(
    case: &BinData<'_>,
    control: &BinData<'_>,
    case_model: &MixtureModel,
    control_model: &MixtureModel,
) -> H0Fit {
    h0_with_models(TestVariant::Full, case, control, case_model, control_model)
}

/// Null proportions with only the CN = 0 and CN = 1 proportions tied.
pub fn fit_h0_deletion(
    case: &BinData<'_>,
    control: &BinData<'_>,
    case_model: &MixtureModel,
    control_model: &MixtureModel,
) -> H0Fit {
    h0_with_models(TestVariant::Deletion, case, control, case_model, control_model)
}

/// Null proportions with only the CN = 3 and CN = 4 proportions tied.
pub fn fit_h0_duplication(
    case: &BinData<'_>,
    control: &BinData<'_>,
    case_model: &MixtureModel,
    control_model: &MixtureModel,
) -> H0Fit {
    h0_with_models(TestVariant::Duplication, case, control, case_model, control_model)
}

/// `sum log h(X | H1) - sum log h(X | H0)` over both groups, where each H0
/// model is its H1 model with replaced proportions. Clamped at zero.
pub fn lr_statistic(
    case: &BinData<'_>,
    control: &BinData<'_>,
    h1_case: &MixtureModel,
    h1_control: &MixtureModel,
    h0_case: &MixtureModel,
    h0_control: &MixtureModel,
) -> f64 {
    let diff = (mixture_loglik(case, h1_case) - mixture_loglik(case, h0_case))
        + (mixture_loglik(control, h1_control) - mixture_loglik(control, h0_control));
    diff.max(0.0)
}

/// Tests every variant in `variants` (except `Summed`) for fixed H1
/// component parameters.
///
/// # Panics
/// If `variants` contains [`TestVariant::Summed`]; use [`summed_lr_test`].
pub fn test_with_models(
    case: &BinData<'_>,
    control: &BinData<'_>,
    h1_case: &MixtureModel,
    h1_control: &MixtureModel,
    variants: &[TestVariant],
) -> Vec<TestOutcome> {
    assert!(
        !variants.contains(&TestVariant::Summed),
        "the summed statistic needs a segment and a permutation reference"
    );
    let dens = BinDensities::new(case, control, h1_case, h1_control);
    let pc = dens.polish(&dens.case, &h1_case.alpha);
    let pt = dens.polish(&dens.control, &h1_control.alpha);
    let ll1 = pc.loglik + pt.loglik;
    variants
        .iter()
        .map(|&variant| {
            let h0 = dens.h0(variant, &pc.state, &pt.state);
            let lambda = (ll1 - h0.loglik).max(0.0);
            let df = degrees_of_freedom(variant, &dens.support);
            TestOutcome {
                variant,
                lambda,
                df,
                p_value: p_value(lambda, df),
                h1_case: h1_case.with_alpha(pc.state),
                h1_control: h1_control.with_alpha(pt.state),
                h0,
                converged: pc.converged && pt.converged && h0.converged,
            }
        })
        .collect()
}

/// Per-group H1 fits on one bin. Seeds for the two groups derive from `seed`.
pub fn fit_h1(
    case: &BinData<'_>,
    control: &BinData<'_>,
    prior: &PriorSpec,
    opts: &FitOptions,
    seed: u64,
) -> (FitResult, FitResult) {
    (
        fit(case, prior, opts, derive_seed(seed, 0, 0)),
        fit(control, prior, opts, derive_seed(seed, 0, 1)),
    )
}

/// Fits both groups and runs each requested variant on one bin.
pub fn test_bin_variants(
    case: &BinData<'_>,
    control: &BinData<'_>,
    variants: &[TestVariant],
    prior: &PriorSpec,
    opts: &FitOptions,
    seed: u64,
) -> Vec<TestOutcome> {
    let (fc, ft) = fit_h1(case, control, prior, opts, seed);
    let mut out = test_with_models(case, control, &fc.model, &ft.model, variants);
    for o in &mut out {
        o.converged &= fc.converged && ft.converged;
    }
    out
}

pub fn test_bin(
    case: &BinData<'_>,
    control: &BinData<'_>,
    variant: TestVariant,
    prior: &PriorSpec,
    opts: &FitOptions,
    seed: u64,
) -> TestOutcome {
    test_bin_variants(case, control, &[variant], prior, opts, seed).remove(0)
}

/// Offsets of each bin inside the segment, checking the two bin lists agree
/// and tile a span of `len` probes.
fn bin_offsets(case_bins: &[BinData<'_>], control_bins: &[BinData<'_>], len: usize) -> Result<Vec<(usize, usize)>> {
    if case_bins.is_empty() || case_bins.len() != control_bins.len() {
        return Err(CnvError::BinMismatch(format!(
            "{} case bins against {} control bins",
            case_bins.len(),
            control_bins.len()
        )));
    }
    let origin = case_bins[0].bin().start;
    let mut out = Vec::with_capacity(case_bins.len());
    let mut expect = origin;
    for (c, t) in case_bins.iter().zip(control_bins) {
        if c.bin() != t.bin() || c.bin().start != expect {
            return Err(CnvError::BinMismatch(format!(
                "bin {:?} does not continue the segment at probe {expect}",
                c.bin()
            )));
        }
        out.push((c.bin().start - origin, c.bin().end - origin));
        expect = c.bin().end;
    }
    if expect - origin != len {
        return Err(CnvError::BinMismatch(format!(
            "bins cover {} probes but the models have {len}",
            expect - origin
        )));
    }
    Ok(out)
}

/// Summed per-bin log-likelihood contrast over a segment.
///
/// Each bin is scored with its slice of the segment-level models; H0 models
/// are the H1 models carrying the null proportions.
pub fn summed_lr(
    case_bins: &[BinData<'_>],
    control_bins: &[BinData<'_>],
    h1_case: &MixtureModel,
    h1_control: &MixtureModel,
    h0_case: &[f64; K],
    h0_control: &[f64; K],
) -> Result<f64> {
    let offsets = bin_offsets(case_bins, control_bins, h1_case.len())?;
    if h1_control.len() != h1_case.len() {
        return Err(CnvError::BinMismatch("case and control models differ in length".into()));
    }
    let mut total = 0.0;
    for ((c, t), &(from, to)) in case_bins.iter().zip(control_bins).zip(&offsets) {
        let mc = h1_case.slice(from, to)?;
        let mt = h1_control.slice(from, to)?;
        total += (mixture_loglik(c, &mc) - mixture_loglik(c, &mc.with_alpha(*h0_case)))
            + (mixture_loglik(t, &mt) - mixture_loglik(t, &mt.with_alpha(*h0_control)));
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub seed: u64,
    /// Absolute log-likelihood tolerance of the proportion fits.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            n_perm: 999,
            seed: 0,
            tol: 1e-8,
            max_iter: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummedOutcome {
    pub lambda: f64,
    pub p_value: f64,
    pub n_perm: usize,
    /// Proportions maximizing the per-bin likelihood of each group.
    pub alpha_case: [f64; K],
    pub alpha_control: [f64; K],
    /// Shared proportions maximizing the pooled per-bin likelihood.
    pub alpha_shared: [f64; K],
    pub converged: bool,
}

impl SummedOutcome {
    pub fn into_outcome(self, h1_case: &MixtureModel, h1_control: &MixtureModel) -> TestOutcome {
        TestOutcome {
            variant: TestVariant::Summed,
            lambda: self.lambda,
            df: 0,
            p_value: self.p_value,
            h1_case: h1_case.with_alpha(self.alpha_case),
            h1_control: h1_control.with_alpha(self.alpha_control),
            h0: H0Fit {
                case: self.alpha_shared,
                control: self.alpha_shared,
                loglik: f64::NAN,
                iterations: 0,
                converged: self.converged,
            },
            converged: self.converged,
        }
    }
}

struct SummedStat {
    lambda: f64,
    case: alpha::AlphaRun<K>,
    control: alpha::AlphaRun<K>,
    shared: alpha::AlphaRun<K>,
}

/// Summed statistic with proportions re-estimated for a labelling of the
/// pooled samples. Units `0..n1` of both density tables are the case samples.
fn summed_stat(
    under_case: &Densities,
    under_control: &Densities,
    case_units: &[usize],
    control_units: &[usize],
    start: [f64; K],
    opts: &PermutationOptions,
) -> SummedStat {
    let case = fit_single(under_case, Some(case_units), start, opts.tol, opts.max_iter);
    let control = fit_single(under_control, Some(control_units), start, opts.tol, opts.max_iter);
    let shared = fit_pooled(
        (under_case, Some(case_units)),
        (under_control, Some(control_units)),
        start,
        opts.tol,
        opts.max_iter,
    );
    SummedStat {
        lambda: (case.loglik + control.loglik - shared.loglik).max(0.0),
        case,
        control,
        shared,
    }
}

/// Summed statistic over a segment with a label-permutation p-value.
///
/// Component parameters come from the segment-level fits and stay fixed.
/// For the observed labels and for every permutation of case/control labels
/// (group sizes kept), per-group and shared proportions are re-fitted on the
/// per-bin likelihood, and the statistic is recomputed. A sample labelled
/// case is always scored with the case parameters.
pub fn summed_lr_test(
    case_bins: &[BinData<'_>],
    control_bins: &[BinData<'_>],
    h1_case: &MixtureModel,
    h1_control: &MixtureModel,
    opts: &PermutationOptions,
) -> Result<SummedOutcome> {
    let offsets = bin_offsets(case_bins, control_bins, h1_case.len())?;
    if h1_control.len() != h1_case.len() {
        return Err(CnvError::BinMismatch("case and control models differ in length".into()));
    }
    let n1 = case_bins[0].n_samples();
    let n2 = control_bins[0].n_samples();
    let n_bins = offsets.len();
    let sup = support(h1_case, h1_control);

    let table = |model: &MixtureModel| -> Result<Densities> {
        let mut rows = vec![[0.0; K]; (n1 + n2) * n_bins];
        for (b, &(from, to)) in offsets.iter().enumerate() {
            let m = model.slice(from, to)?;
            for (i, d) in m.component_log_densities(&case_bins[b], true).into_iter().enumerate() {
                rows[i * n_bins + b] = d;
            }
            for (j, d) in m.component_log_densities(&control_bins[b], true).into_iter().enumerate() {
                rows[(n1 + j) * n_bins + b] = d;
            }
        }
        Ok(Densities::new(rows, sup, n_bins))
    };
    let under_case = table(h1_case)?;
    let under_control = table(h1_control)?;

    let w = n1 as f64 / (n1 + n2) as f64;
    let start: [f64; K] = std::array::from_fn(|k| w * h1_case.alpha[k] + (1.0 - w) * h1_control.alpha[k]);
    let case_units: Vec<usize> = (0..n1).collect();
    let control_units: Vec<usize> = (n1..n1 + n2).collect();
    let obs = summed_stat(&under_case, &under_control, &case_units, &control_units, start, opts);

    let p_value = if obs.lambda <= 0.0 || opts.n_perm == 0 {
        1.0
    } else {
        let threshold = obs.lambda - 1e-9 * obs.lambda.max(1.0);
        let warm = obs.shared.state;
        let exceed: usize = (0..opts.n_perm)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, r as u64, 0));
                let mut idx: Vec<usize> = (0..n1 + n2).collect();
                idx.shuffle(&mut rng);
                let (c, t) = idx.split_at(n1);
                let s = summed_stat(&under_case, &under_control, c, t, warm, opts);
                usize::from(s.lambda >= threshold)
            })
            .sum();
        (1 + exceed) as f64 / (opts.n_perm + 1) as f64
    };

    Ok(SummedOutcome {
        lambda: obs.lambda,
        p_value,
        n_perm: opts.n_perm,
        alpha_case: obs.case.state,
        alpha_control: obs.control.state,
        alpha_shared: obs.shared.state,
        converged: obs.case.converged && obs.control.converged && obs.shared.converged,
    })
}

#[cfg(test)]
mod tests;
