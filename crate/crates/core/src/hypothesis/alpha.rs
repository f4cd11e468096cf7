//! Proportion-only EM with component densities held fixed.

use crate::mixture::K;

/// Component log-densities of a set of rows, kept alongside their
/// likelihood ratios against the row maximum so that EM sweeps need no
/// exponentials.
#[derive(Debug, Clone)]
pub(crate) struct Densities {
    log: Vec<[f64; K]>,
    ratio: Vec<[f64; K]>,
    shift: Vec<f64>,
    rows_per_unit: usize,
}

/// Below this, a row's ratio sum is recomputed in log space.
const RATIO_UNDERFLOW: f64 = 1e-250;

impl Densities {
    /// `log` holds one row per (unit, sub-row), unit-major. Clusters outside
    /// `support` are ignored.
    pub(crate) fn new(log: Vec<[f64; K]>, support: [bool; K], rows_per_unit: usize) -> Self {
        assert!(rows_per_unit >= 1 && log.len().is_multiple_of(rows_per_unit));
        let mut ratio = Vec::with_capacity(log.len());
        let mut shift = Vec::with_capacity(log.len());
        for row in &log {
            let m = (0..K)
                .filter(|&k| support[k])
                .map(|k| row[k])
                .fold(f64::NEG_INFINITY, f64::max);
            shift.push(m);
            ratio.push(std::array::from_fn(|k| if support[k] { (row[k] - m).exp() } else { 0.0 }));
        }
        Self {
            log,
            ratio,
            shift,
            rows_per_unit,
        }
    }

    pub(crate) fn n_units(&self) -> usize {
        self.log.len() / self.rows_per_unit
    }

    fn row(&self, r: usize, alpha: &[f64; K], mass: Option<&mut [f64; K]>) -> f64 {
        let lr = &self.ratio[r];
        let mut s = 0.0;
        for k in 0..K {
            s += alpha[k] * lr[k];
        }
        if s > RATIO_UNDERFLOW {
            if let Some(mass) = mass {
                let inv = 1.0 / s;
                for k in 0..K {
                    mass[k] += alpha[k] * lr[k] * inv;
                }
            }
            return self.shift[r] + s.ln();
        }
        let w: [f64; K] = std::array::from_fn(|k| {
            if alpha[k] > 0.0 {
                alpha[k].ln() + self.log[r][k]
            } else {
                f64::NEG_INFINITY
            }
        });
        let lse = crate::mixture::log_sum_exp(&w);
        if let Some(mass) = mass {
            if lse.is_finite() {
                for k in 0..K {
                    if alpha[k] > 0.0 {
                        mass[k] += (w[k] - lse).exp();
                    }
                }
            }
        }
        lse
    }

    /// Log-likelihood of the chosen units under `alpha`, adding posterior
    /// cluster masses into `mass`. `None` means every unit.
    pub(crate) fn sweep(&self, alpha: &[f64; K], units: Option<&[usize]>, mut mass: Option<&mut [f64; K]>) -> f64 {
        let rpu = self.rows_per_unit;
        let mut ll = 0.0;
        let mut unit = |u: usize, ll: &mut f64| {
            for r in u * rpu..(u + 1) * rpu {
                *ll += self.row(r, alpha, mass.as_deref_mut());
            }
        };
        match units {
            Some(us) => us.iter().for_each(|&u| unit(u, &mut ll)),
            None => (0..self.n_units()).for_each(|u| unit(u, &mut ll)),
        }
        ll
    }

    pub(crate) fn n_rows(&self, units: Option<&[usize]>) -> usize {
        units.map_or(self.n_units(), <[usize]>::len) * self.rows_per_unit
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AlphaRun<const M: usize> {
    pub state: [f64; M],
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Drives a monotone fixed-point map to convergence with squared
/// extrapolation. `map(x)` returns the EM image of `x` and the
/// log-likelihood at `x`. Stops when a full cycle gains less than `tol`.
pub(crate) fn accelerate<const M: usize>(
    start: [f64; M],
    map: impl Fn(&[f64; M]) -> ([f64; M], f64),
    tol: f64,
    max_iter: usize,
) -> AlphaRun<M> {
    let mut x = start;
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    loop {
        let (x1, l0) = map(&x);
        iterations += 1;
        if l0 - prev < tol {
            return AlphaRun {
                state: x,
                loglik: l0,
                iterations,
                converged: true,
            };
        }
        prev = l0;
        if iterations >= max_iter {
            return AlphaRun {
                state: x,
                loglik: l0,
                iterations,
                converged: false,
            };
        }
        let (x2, l1) = map(&x1);
        iterations += 1;
        let r: [f64; M] = std::array::from_fn(|i| x1[i] - x[i]);
        let v: [f64; M] = std::array::from_fn(|i| x2[i] - x1[i] - r[i]);
        let rn = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if vn < 1e-300 || rn == 0.0 {
            x = x2;
            continue;
        }
        let s = (-rn / vn).min(-1.0);
        let mut xp: [f64; M] = std::array::from_fn(|i| x[i] - 2.0 * s * r[i] + s * s * v[i]);
        if xp.iter().any(|a| !a.is_finite() || *a < -1e-12) {
            x = x2;
            continue;
        }
        for a in xp.iter_mut() {
            if *a < 0.0 {
                *a = 0.0;
            }
        }
        let (x3, lp) = map(&xp);
        iterations += 1;
        x = if lp >= l1 { x3 } else { x2 };
    }
}

/// Splits a stacked two-group state.
pub(crate) fn split(state: &[f64; 2 * K]) -> ([f64; K], [f64; K]) {
    (
        std::array::from_fn(|k| state[k]),
        std::array::from_fn(|k| state[K + k]),
    )
}

pub(crate) fn stack(a: &[f64; K], b: &[f64; K]) -> [f64; 2 * K] {
    std::array::from_fn(|i| if i < K { a[i] } else { b[i - K] })
}

/// EM for one free proportion vector over `units` of `dens`.
pub(crate) fn fit_single(
    dens: &Densities,
    units: Option<&[usize]>,
    start: [f64; K],
    tol: f64,
    max_iter: usize,
) -> AlphaRun<K> {
    let n = dens.n_rows(units) as f64;
    accelerate(
        start,
        |a| {
            let mut mass = [0.0; K];
            let ll = dens.sweep(a, units, Some(&mut mass));
            (mass.map(|m| m / n), ll)
        },
        tol,
        max_iter,
    )
}

/// EM for one proportion vector shared by two row sets, each evaluated under
/// its own densities.
pub(crate) fn fit_pooled(
    a: (&Densities, Option<&[usize]>),
    b: (&Densities, Option<&[usize]>),
    start: [f64; K],
    tol: f64,
    max_iter: usize,
) -> AlphaRun<K> {
    let n = (a.0.n_rows(a.1) + b.0.n_rows(b.1)) as f64;
    accelerate(
        start,
        |alpha| {
            let mut mass = [0.0; K];
            let ll = a.0.sweep(alpha, a.1, Some(&mut mass)) + b.0.sweep(alpha, b.1, Some(&mut mass));
            (mass.map(|m| m / n), ll)
        },
        tol,
        max_iter,
    )
}
