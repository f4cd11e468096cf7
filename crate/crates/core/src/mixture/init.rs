//! Starting values for EM: per-sample bin means are grouped by a 1-D
//! Gaussian mixture seeded from k-means, with the number of groups chosen by
//! BIC, then each group is mapped onto a
//! copy-number state through fixed intervals on the log2-ratio axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{log_gaussian, Covariance, MixtureModel, PriorSpec, K};
use crate::matrix::BinData;

/// Intervals `(lo, hi]` of group centres mapped to CN = 0..4.
const STATE_INTERVALS: [(f64, f64); K] = [
    (-3.0, -0.9),
    (-0.9, -0.3),
    (-0.3, 0.25),
    (0.25, 0.6),
    (0.6, 3.0),
];

const KMEANS_RESTARTS: usize = 4;
const KMEANS_MAX_ITER: usize = 100;
const MIXTURE_STEPS: usize = 30;

/// Smallest within-group variance of bin means used when scoring a grouping.
/// Groups of copy-number states sit tenths of a log2 unit apart, so splits
/// finer than this only chase noise.
const GROUP_VAR_FLOOR: f64 = 0.0025;

pub fn state_interval(state: usize) -> (f64, f64) {
    STATE_INTERVALS[state]
}

fn interval_distance(x: f64, state: usize) -> f64 {
    let (lo, hi) = STATE_INTERVALS[state];
    if x > lo && x <= hi {
        0.0
    } else if x <= lo {
        lo - x
    } else {
        x - hi
    }
}

/// Clusters of per-sample bin means.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// Increasing group centres.
    pub centers: Vec<f64>,
    /// Group index per input value, in input order.
    pub labels: Vec<usize>,
}

fn lloyd(sorted: &[f64], mut centers: Vec<f64>) -> (Vec<f64>, Vec<usize>, f64) {
    let n = sorted.len();
    let mut labels = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        centers.sort_by(f64::total_cmp);
        centers.dedup();
        let k = centers.len();
        // Sorted data and sorted centres: each group is a contiguous run.
        let mut g = 0;
        for (i, &x) in sorted.iter().enumerate() {
            while g + 1 < k && (x - centers[g + 1]).abs() < (x - centers[g]).abs() {
                g += 1;
            }
            labels[i] = g;
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &l) in sorted.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        let next: Vec<f64> = (0..k)
            .filter(|&g| counts[g] > 0)
            .map(|g| sums[g] / counts[g] as f64)
            .collect();
        if next == centers {
            break;
        }
        centers = next;
    }
    // Relabel to drop empty groups after the final pass.
    let k = centers.len();
    let mut g = 0;
    for (i, &x) in sorted.iter().enumerate() {
        while g + 1 < k && (x - centers[g + 1]).abs() < (x - centers[g]).abs() {
            g += 1;
        }
        labels[i] = g;
    }
    let sse = sorted
        .iter()
        .zip(&labels)
        .map(|(&x, &l)| (x - centers[l]).powi(2))
        .sum();
    (centers, labels, sse)
}

fn kmeans_pp_seeds(sorted: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = sorted.len();
    let mut centers = vec![sorted[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = sorted.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = sorted[pick];
        centers.push(c);
        for (d, &x) in d2.iter_mut().zip(sorted) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers
}

fn best_kmeans(sorted: &[f64], k: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>, f64) {
    let n = sorted.len();
    let quantiles: Vec<f64> = (0..k)
        .map(|g| sorted[((2 * g + 1) * n / (2 * k)).min(n - 1)])
        .collect();
    let mut best = lloyd(sorted, quantiles);
    for _ in 0..KMEANS_RESTARTS {
        let cand = lloyd(sorted, kmeans_pp_seeds(sorted, k, rng));
        if cand.0.len() > best.0.len() || (cand.0.len() == best.0.len() && cand.2 < best.2) {
            best = cand;
        }
    }
    best
}

/// One-dimensional Gaussian mixture with a variance per group.
#[derive(Debug, Clone)]
struct Mixture1d {
    w: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    loglik: f64,
}

impl Mixture1d {
    fn from_labels(sorted: &[f64], labels: &[usize], k: usize) -> Self {
        let nf = sorted.len() as f64;
        let mut w = vec![0.0f64; k];
        let mut m = vec![0.0f64; k];
        let mut v = vec![0.0f64; k];
        for (&x, &l) in sorted.iter().zip(labels) {
            w[l] += 1.0;
            m[l] += x;
        }
        for g in 0..k {
            m[g] /= w[g].max(1.0);
        }
        for (&x, &l) in sorted.iter().zip(labels) {
            v[l] += (x - m[l]).powi(2);
        }
        for g in 0..k {
            v[g] = (v[g] / w[g].max(1.0)).max(GROUP_VAR_FLOOR);
            w[g] /= nf;
        }
        Self {
            w,
            m,
            v,
            loglik: f64::NEG_INFINITY,
        }
    }

    fn k(&self) -> usize {
        self.w.len()
    }

    fn log_joint(&self, x: f64, out: &mut [f64]) -> f64 {
        let mut top = f64::NEG_INFINITY;
        for g in 0..self.k() {
            out[g] = if self.w[g] > 0.0 {
                self.w[g].ln() + log_gaussian(x, self.m[g], self.v[g])
            } else {
                f64::NEG_INFINITY
            };
            top = top.max(out[g]);
        }
        top + out.iter().map(|r| (r - top).exp()).sum::<f64>().ln()
    }

    /// Runs `steps` EM updates and records the final log-likelihood.
    fn refine(mut self, sorted: &[f64], steps: usize) -> Self {
        let k = self.k();
        let nf = sorted.len() as f64;
        let mut lj = vec![0.0; k];
        for step in 0..=steps {
            let mut sw = vec![0.0; k];
            let mut sx = vec![0.0; k];
            let mut sxx = vec![0.0; k];
            let mut ll = 0.0;
            for &x in sorted {
                let l = self.log_joint(x, &mut lj);
                ll += l;
                for g in 0..k {
                    let r = (lj[g] - l).exp();
                    sw[g] += r;
                    sx[g] += r * x;
                    sxx[g] += r * x * x;
                }
            }
            self.loglik = ll;
            if step == steps {
                break;
            }
            for g in 0..k {
                if sw[g] <= 0.0 {
                    self.w[g] = 0.0;
                    continue;
                }
                self.w[g] = sw[g] / nf;
                self.m[g] = sx[g] / sw[g];
                self.v[g] = (sxx[g] / sw[g] - self.m[g] * self.m[g]).max(GROUP_VAR_FLOOR);
            }
        }
        self
    }

    /// Adds a narrow group at the value the mixture explains worst.
    fn split_worst(&self, sorted: &[f64]) -> Self {
        let mut lj = vec![0.0; self.k()];
        let mut worst = (f64::INFINITY, sorted[0]);
        for &x in sorted {
            let l = self.log_joint(x, &mut lj);
            if l < worst.0 {
                worst = (l, x);
            }
        }
        let share = 1.0 / (self.k() + 1) as f64;
        let mut next = self.clone();
        next.w.iter_mut().for_each(|w| *w *= 1.0 - share);
        next.w.push(share);
        next.m.push(worst.1);
        next.v.push(GROUP_VAR_FLOOR);
        next
    }

    fn map_labels(&self, sorted: &[f64]) -> Vec<usize> {
        let mut lj = vec![0.0; self.k()];
        sorted
            .iter()
            .map(|&x| {
                self.log_joint(x, &mut lj);
                (0..self.k()).max_by(|&a, &b| lj[a].total_cmp(&lj[b])).unwrap()
            })
            .collect()
    }
}

/// Groups per-sample bin means into 1..=`max_k` clusters.
///
/// For each count a 1-D Gaussian mixture with per-group variances is fitted
/// from two starts, the k-means partition and the best fit with one group
/// fewer plus a group at the worst-explained value. The count with the lowest
/// BIC wins and samples take their most probable group.
pub fn group_bin_means(values: &[f64], max_k: usize, seed: u64) -> Grouping {
    let n = values.len();
    assert!(n > 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();

    let mut distinct = sorted.clone();
    distinct.dedup();
    let max_k = max_k.min(distinct.len()).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut best: Option<(f64, Mixture1d)> = None;
    let mut prev: Option<Mixture1d> = None;
    for k in 1..=max_k {
        let (centers, labels, _) = best_kmeans(&sorted, k, &mut rng);
        let mut fit = Mixture1d::from_labels(&sorted, &labels, centers.len()).refine(&sorted, MIXTURE_STEPS);
        if let Some(p) = &prev {
            let grown = p.split_worst(&sorted).refine(&sorted, MIXTURE_STEPS);
            if grown.loglik > fit.loglik {
                fit = grown;
            }
        }
        let bic = -2.0 * fit.loglik + (3 * fit.k() - 1) as f64 * nf.ln();
        if best.as_ref().is_none_or(|b| bic < b.0) {
            best = Some((bic, fit.clone()));
        }
        prev = Some(fit);
    }
    let (_, fit) = best.unwrap();

    // Keep occupied groups only, in increasing order of their means.
    let raw = fit.map_labels(&sorted);
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    used.sort_by(|&a, &b| fit.m[a].total_cmp(&fit.m[b]));
    let mut rank = vec![0; fit.k()];
    for (r, &g) in used.iter().enumerate() {
        rank[g] = r;
    }
    let mut sums = vec![0.0; used.len()];
    let mut counts = vec![0usize; used.len()];
    let mut labels = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        let g = rank[raw[r]];
        labels[i] = g;
        sums[g] += sorted[r];
        counts[g] += 1;
    }
    let centers: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Grouping { centers, labels }
}

/// Maps increasing group centres onto strictly increasing copy-number states.
///
/// A centre normally takes the state whose interval contains it. When several
/// centres share an interval, the one nearest that state's anchor keeps it and
/// the others move outwards to the neighbouring states, keeping their order.
pub fn assign_states(centers: &[f64], tau: &[f64; K]) -> Vec<usize> {
    let g = centers.len();
    assert!((1..=K).contains(&g));
    let home: Vec<usize> = centers
        .iter()
        .map(|&c| (0..K).min_by(|&a, &b| interval_distance(c, a).total_cmp(&interval_distance(c, b))).unwrap())
        .collect();
    let mut states = home.clone();
    let mut i = 0;
    while i < g {
        let mut j = i;
        while j + 1 < g && home[j + 1] == home[i] {
            j += 1;
        }
        let s = home[i] as isize;
        let keeper = (i..=j)
            .min_by(|&a, &b| (centers[a] - tau[home[a]]).abs().total_cmp(&(centers[b] - tau[home[b]]).abs()))
            .unwrap();
        for m in i..=j {
            states[m] = (s + m as isize - keeper as isize).clamp(0, K as isize - 1) as usize;
        }
        i = j + 1;
    }
    // Restore strict order where shifted groups ran into each other or the ends.
    for m in 1..g {
        states[m] = states[m].max(states[m - 1] + 1);
    }
    if states[g - 1] >= K {
        states[g - 1] = K - 1;
        for m in (0..g - 1).rev() {
            states[m] = states[m].min(states[m + 1] - 1);
        }
    }
    states
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub model: MixtureModel,
    /// Initial copy-number state per sample.
    pub states: Vec<usize>,
    /// Every observation in the bin had the same value.
    pub degenerate: bool,
}

/// Starting parameters for EM on one bin.
pub fn init_params(
    data: &BinData<'_>,
    prior: &PriorSpec,
    covariance: Covariance,
    variance_floor: f64,
    seed: u64,
) -> Initialization {
    let n = data.n_samples();
    let p = data.len();
    let means = data.row_means();
    let km = group_bin_means(&means, K, seed);
    let group_state = assign_states(&km.centers, &prior.tau);
    let states: Vec<usize> = km.labels.iter().map(|&g| group_state[g]).collect();

    let mut counts = [0usize; K];
    for &s in &states {
        counts[s] += 1;
    }

    // Overall per-probe mean and variance, used for sparse or empty clusters.
    let mut col_mean = vec![0.0; p];
    for x in data.rows() {
        for j in 0..p {
            col_mean[j] += x[j];
        }
    }
    col_mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut col_var = vec![0.0; p];
    for x in data.rows() {
        for j in 0..p {
            col_var[j] += (x[j] - col_mean[j]).powi(2);
        }
    }
    col_var.iter_mut().for_each(|v| *v /= n as f64);
    let grand_mean = col_mean.iter().sum::<f64>() / p as f64;
    let pooled_var = data
        .rows()
        .flat_map(|x| x.iter())
        .map(|v| (v - grand_mean).powi(2))
        .sum::<f64>()
        / (n * p) as f64;
    let first = data.row(0)[0];
    let degenerate = data.rows().flatten().all(|&v| v == first);

    let mut alpha = [0.0; K];
    let mut mu: [Vec<f64>; K] = std::array::from_fn(|k| vec![prior.tau[k]; p]);
    let mut sigma2: [Vec<f64>; K] = std::array::from_fn(|_| match covariance {
        Covariance::Anisotropic => col_var.iter().map(|v| v.max(variance_floor)).collect(),
        Covariance::Isotropic => vec![pooled_var.max(variance_floor); p],
    });

    for k in 0..K {
        let nk = counts[k];
        if nk == 0 {
            continue;
        }
        alpha[k] = nk as f64 / n as f64;
        let members: Vec<&[f64]> = (0..n).filter(|&i| states[i] == k).map(|i| data.row(i)).collect();
        let mut m = vec![0.0; p];
        for x in &members {
            for j in 0..p {
                m[j] += x[j];
            }
        }
        m.iter_mut().for_each(|v| *v /= nk as f64);
        match covariance {
            Covariance::Anisotropic => {
                if nk >= 2 {
                    let mut v = vec![0.0; p];
                    for x in &members {
                        for j in 0..p {
                            v[j] += (x[j] - m[j]).powi(2);
                        }
                    }
                    sigma2[k] = v.iter().map(|s| (s / nk as f64).max(variance_floor)).collect();
                }
                mu[k] = m;
            }
            Covariance::Isotropic => {
                let c = m.iter().sum::<f64>() / p as f64;
                if nk >= 2 {
                    let ss: f64 = members.iter().flat_map(|x| x.iter()).map(|v| (v - c).powi(2)).sum();
                    sigma2[k] = vec![(ss / (nk * p) as f64).max(variance_floor); p];
                }
                mu[k] = vec![c; p];
            }
        }
    }

    Initialization {
        model: MixtureModel {
            alpha,
            mu,
            sigma2,
            covariance,
        },
        states,
        degenerate,
    }
}
