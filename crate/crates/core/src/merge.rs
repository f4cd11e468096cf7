//! Bottom-up merging of adjacent bins into segments.
//!
//! Adjacent segments are scored by how much log-likelihood each group loses
//! when the two spans share one fit. The pair with the smallest combined
//! loss is merged while both losses stay under a threshold growing like
//! `log(N * p)`; the merged fit then becomes the segment's model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CnvError, Result};
use crate::hypothesis::TestOutcome;
use crate::matrix::{slice, Bin, BinData, IntensityMatrix};
use crate::mixture::{fit, fit_from, mixture_loglik, FitOptions, FitResult, MixtureModel, PriorSpec};
use crate::stats::derive_seed;

/// Admissible cluster means: CN = 0 and 1 must stay below their maxima,
/// CN = 3 and 4 above their minima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanBounds {
    pub cn0_max: f64,
    pub cn1_max: f64,
    pub cn3_min: f64,
    pub cn4_min: f64,
}

impl Default for MeanBounds {
    fn default() -> Self {
        Self {
            cn0_max: -0.9,
            cn1_max: -0.4,
            cn3_min: 0.35,
            cn4_min: 0.65,
        }
    }
}

impl MeanBounds {
    pub fn satisfied(&self, model: &MixtureModel) -> bool {
        let below = |k: usize, max: f64| model.mu[k].iter().all(|&m| m < max);
        let above = |k: usize, min: f64| model.mu[k].iter().all(|&m| m > min);
        below(0, self.cn0_max) && below(1, self.cn1_max) && above(3, self.cn3_min) && above(4, self.cn4_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub lambda_d: f64,
    /// Control threshold factor; `None` scales `lambda_d` by `N2 / N1`.
    pub lambda_c: Option<f64>,
    pub bounds: MeanBounds,
    /// How many times the prior variance may be halved to meet the bounds.
    pub max_halvings: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            lambda_d: 2.0,
            lambda_c: None,
            bounds: MeanBounds::default(),
            max_halvings: 10,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d > 0.0 && self.lambda_d.is_finite()) {
            return Err(CnvError::config("merge.lambda_d", "must be positive"));
        }
        if let Some(c) = self.lambda_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(CnvError::config("merge.lambda_c", "must be positive"));
            }
        }
        let b = &self.bounds;
        if !(b.cn0_max <= b.cn1_max && b.cn1_max < b.cn3_min && b.cn3_min <= b.cn4_min) {
            return Err(CnvError::config("merge.bounds", "bounds must be ordered cn0 <= cn1 < cn3 <= cn4"));
        }
        Ok(())
    }

    pub fn lambda_c_for(&self, n_case: usize, n_control: usize) -> f64 {
        self.lambda_c
            .unwrap_or(self.lambda_d * n_control as f64 / n_case as f64)
    }
}

/// A fit whose means were pushed into the admissible ranges by shrinking the
/// prior variance.
#[derive(Debug, Clone)]
pub struct ConstrainedFit {
    pub fit: FitResult,
    /// Prior variance in effect for the returned fit.
    pub prior_variance: f64,
    pub halvings: usize,
    pub bounds_ok: bool,
}

/// Fits one group, halving the prior variance and refitting from the last
/// estimate until the means meet `bounds` or `max_halvings` is exhausted.
pub fn fit_constrained(
    data: &BinData<'_>,
    prior: &PriorSpec,
    opts: &FitOptions,
    bounds: &MeanBounds,
    max_halvings: usize,
    start: Option<MixtureModel>,
    seed: u64,
) -> ConstrainedFit {
    let mut prior_h = *prior;
    let mut res = match start {
        Some(m) => fit_from(data, &prior_h, opts, m),
        None => fit(data, &prior_h, opts, seed),
    };
    let mut halvings = 0;
    while !bounds.satisfied(&res.model) && halvings < max_halvings {
        halvings += 1;
        prior_h = prior_h.with_scale(prior_h.scale / 2.0);
        let degenerate = res.degenerate;
        res = fit_from(data, &prior_h, opts, res.model);
        res.degenerate = degenerate;
    }
    ConstrainedFit {
        bounds_ok: bounds.satisfied(&res.model),
        prior_variance: prior_h.variance(data.n_samples(), data.len()),
        fit: res,
        halvings,
    }
}

/// Constrained fits of both groups on one span.
pub fn fit_joint_constrained(
    case_span: &BinData<'_>,
    control_span: &BinData<'_>,
    prior: &PriorSpec,
    opts: &FitOptions,
    config: &MergeConfig,
    start: Option<(MixtureModel, MixtureModel)>,
    seed: u64,
) -> (ConstrainedFit, ConstrainedFit) {
    let (sc, st) = match start {
        Some((c, t)) => (Some(c), Some(t)),
        None => (None, None),
    };
    let run = |data: &BinData<'_>, s: Option<MixtureModel>, salt: u64| {
        fit_constrained(
            data,
            prior,
            opts,
            &config.bounds,
            config.max_halvings,
            s,
            derive_seed(seed, salt, 0),
        )
    };
    (run(case_span, sc, 0), run(control_span, st, 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeScore {
    pub m_case: f64,
    pub m_control: f64,
}

impl MergeScore {
    pub fn combined(&self) -> f64 {
        self.m_case + self.m_control
    }
}

/// Log-likelihood lost on two adjacent spans when their separate models are
/// replaced by the matching slices of one joint model.
pub fn merge_score(
    data_b: &BinData<'_>,
    data_b1: &BinData<'_>,
    model_b: &MixtureModel,
    model_b1: &MixtureModel,
    model_joint: &MixtureModel,
) -> Result<f64> {
    let p = data_b.len();
    let q = data_b1.len();
    if model_b.len() != p || model_b1.len() != q || model_joint.len() != p + q {
        return Err(CnvError::SliceMismatch {
            start: 0,
            end: p + q,
            len: model_joint.len(),
        });
    }
    let left = model_joint.slice(0, p)?;
    let right = model_joint.slice(p, p + q)?;
    Ok((mixture_loglik(data_b, model_b) - mixture_loglik(data_b, &left))
        + (mixture_loglik(data_b1, model_b1) - mixture_loglik(data_b1, &right)))
}

/// A run of consecutive bins with its fitted models.
#[derive(Debug, Clone)]
pub struct Segment {
    /// Index of the first member bin.
    pub first_bin: usize,
    /// One past the last member bin.
    pub end_bin: usize,
    pub span: Bin,
    pub case: ConstrainedFit,
    pub control: ConstrainedFit,
    pub outcomes: Vec<TestOutcome>,
}

impl Segment {
    pub fn n_bins(&self) -> usize {
        self.end_bin - self.first_bin
    }

    pub fn bounds_ok(&self) -> bool {
        self.case.bounds_ok && self.control.bounds_ok
    }

    pub fn converged(&self) -> bool {
        self.case.fit.converged && self.control.fit.converged
    }
}

/// One segment per bin, each fitted under the mean bounds.
pub fn initial_segments(
    case: &IntensityMatrix,
    control: &IntensityMatrix,
    bins: &[Bin],
    prior: &PriorSpec,
    opts: &FitOptions,
    config: &MergeConfig,
    seed: u64,
) -> Result<Vec<Segment>> {
    if case.n_probes() != control.n_probes() {
        return Err(CnvError::ProbeCountMismatch {
            case: case.n_probes(),
            control: control.n_probes(),
        });
    }
    bins.par_iter()
        .enumerate()
        .map(|(b, &bin)| {
            let (c, t) = fit_joint_constrained(
                &slice(case, bin)?,
                &slice(control, bin)?,
                prior,
                opts,
                config,
                None,
                derive_seed(seed, b as u64, 0x5E6),
            );
            Ok(Segment {
                first_bin: b,
                end_bin: b + 1,
                span: bin,
                case: c,
                control: t,
                outcomes: Vec::new(),
            })
        })
        .collect()
}

/// Score of a candidate pair together with the merged segment it would yield.
#[derive(Debug, Clone)]
struct Candidate {
    score: Option<MergeScore>,
    merged: Segment,
}

fn evaluate_pair(
    case: &IntensityMatrix,
    control: &IntensityMatrix,
    left: &Segment,
    right: &Segment,
    prior: &PriorSpec,
    opts: &FitOptions,
    config: &MergeConfig,
) -> Result<Candidate> {
    let span = Bin::new(left.span.start, right.span.end);
    let (case_span, ctrl_span) = (slice(case, span)?, slice(control, span)?);
    let w = left.span.len() as f64 / span.len() as f64;
    let start = (
        MixtureModel::concat(&left.case.fit.model, &right.case.fit.model, w),
        MixtureModel::concat(&left.control.fit.model, &right.control.fit.model, w),
    );
    let (jc, jt) = fit_joint_constrained(&case_span, &ctrl_span, prior, opts, config, Some(start), 0);

    // The separate fits are refitted under the joint fit's prior variance,
    // so both sides of the comparison carry the same shrinkage. Each is
    // started from its own segment model and from the joint slice, keeping
    // the better optimum; a negative loss is an EM local optimum and is
    // clamped.
    let side = |data: &IntensityMatrix, seg_l: &ConstrainedFit, seg_r: &ConstrainedFit, joint: &ConstrainedFit| {
        let fixed = prior.fixed(joint.prior_variance);
        let (dl, dr) = (slice(data, left.span)?, slice(data, right.span)?);
        let jm = &joint.fit.model;
        let best = |d: &BinData<'_>, own: &MixtureModel, from: usize, to: usize| -> Result<MixtureModel> {
            let a = fit_from(d, &fixed, opts, own.clone());
            let b = fit_from(d, &fixed, opts, jm.slice(from, to)?);
            Ok(if b.penalized_loglik > a.penalized_loglik { b.model } else { a.model })
        };
        let p = left.span.len();
        let fl = best(&dl, &seg_l.fit.model, 0, p)?;
        let fr = best(&dr, &seg_r.fit.model, p, span.len())?;
        Ok::<f64, CnvError>(merge_score(&dl, &dr, &fl, &fr, jm)?.max(0.0))
    };
    let score = if jc.bounds_ok && jt.bounds_ok {
        Some(MergeScore {
            m_case: side(case, &left.case, &right.case, &jc)?,
            m_control: side(control, &left.control, &right.control, &jt)?,
        })
    } else {
        None
    };
    Ok(Candidate {
        score,
        merged: Segment {
            first_bin: left.first_bin,
            end_bin: right.end_bin,
            span,
            case: jc,
            control: jt,
            outcomes: Vec::new(),
        },
    })
}

/// Greedy bottom-up merging.
///
/// Each round takes the mergeable pair with the smallest combined score
/// (leftmost on ties) and merges it if `m_case < lambda_d * ln(N1 * p)` and
/// `m_control < lambda_c * ln(N2 * p)`, `p` being the merged length;
/// otherwise merging stops. Pairs whose joint fit cannot meet the mean
/// bounds are never merged. Only the two pairs touching a new segment are
/// rescored.
pub fn merge_pass(
    segments: Vec<Segment>,
    case: &IntensityMatrix,
    control: &IntensityMatrix,
    config: &MergeConfig,
    prior: &PriorSpec,
    opts: &FitOptions,
) -> Result<Vec<Segment>> {
    config.validate()?;
    let mut segs = segments;
    if segs.len() < 2 {
        return Ok(segs);
    }
    let n1 = case.n_samples();
    let n2 = control.n_samples();
    let lambda_c = config.lambda_c_for(n1, n2);
    let pair = |l: &Segment, r: &Segment| evaluate_pair(case, control, l, r, prior, opts, config);

    let mut cands: Vec<Candidate> = segs
        .par_windows(2)
        .map(|w| pair(&w[0], &w[1]))
        .collect::<Result<_>>()?;

    loop {
        let best = cands
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.score.map(|s| (i, s)))
            .min_by(|a, b| a.1.combined().total_cmp(&b.1.combined()).then(a.0.cmp(&b.0)));
        let Some((i, score)) = best else { break };
        let p = cands[i].merged.span.len() as f64;
        let ok = score.m_case < config.lambda_d * (n1 as f64 * p).ln()
            && score.m_control < lambda_c * (n2 as f64 * p).ln();
        if !ok {
            break;
        }
        let merged = cands.remove(i).merged;
        segs.splice(i..i + 2, [merged]);
        // Pair i-1 now ends at the new segment and pair i (formerly i+1)
        // starts at it.
        let (left, right) = rayon::join(
            || (i > 0).then(|| pair(&segs[i - 1], &segs[i])),
            || (i + 1 < segs.len()).then(|| pair(&segs[i], &segs[i + 1])),
        );
        if let Some(c) = left {
            cands[i - 1] = c?;
        }
        if let Some(c) = right {
            cands[i] = c?;
        }
    }
    Ok(segs)
}

/// Scores of every adjacent pair of `segments`, `None` where the joint fit
/// misses the mean bounds.
pub fn pair_scores(
    segments: &[Segment],
    case: &IntensityMatrix,
    control: &IntensityMatrix,
    config: &MergeConfig,
    prior: &PriorSpec,
    opts: &FitOptions,
) -> Result<Vec<Option<MergeScore>>> {
    segments
        .par_windows(2)
        .map(|w| Ok(evaluate_pair(case, control, &w[0], &w[1], prior, opts, config)?.score))
        .collect()
}
