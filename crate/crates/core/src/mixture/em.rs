use super::{
    init_params, log_gaussian, log_sum_exp, Covariance, FitOptions, FitResult, MixtureModel, PriorSpec,
    Responsibilities, K, MIN_CLUSTER_MASS,
};
use crate::matrix::BinData;

/// Posterior state probabilities together with the mixture log-likelihood.
fn e_step_ll(data: &BinData<'_>, model: &MixtureModel) -> (Responsibilities, f64) {
    let log_alpha = model.alpha.map(|a| if a > 0.0 { a.ln() } else { f64::NEG_INFINITY });
    let mut ll = 0.0;
    let rows = model
        .component_log_densities(data, false)
        .into_iter()
        .map(|dens| {
            let mut w = [f64::NEG_INFINITY; K];
            for k in 0..K {
                if model.alpha[k] > 0.0 {
                    w[k] = log_alpha[k] + dens[k];
                }
            }
            let lse = log_sum_exp(&w);
            ll += lse;
            w.map(|v| if v == f64::NEG_INFINITY { 0.0 } else { (v - lse).exp() })
        })
        .collect();
    (Responsibilities { rows }, ll)
}

/// Posterior membership of every sample; empty clusters get exactly zero.
pub fn e_step(data: &BinData<'_>, model: &MixtureModel) -> Responsibilities {
    e_step_ll(data, model).0
}

/// `sum_i log h(X_i | model)`, the unpenalized mixture log-likelihood.
pub fn mixture_loglik(data: &BinData<'_>, model: &MixtureModel) -> f64 {
    per_sample_loglik(data, model).iter().sum()
}

/// `log h(X_i | model)` for every sample.
pub fn per_sample_loglik(data: &BinData<'_>, model: &MixtureModel) -> Vec<f64> {
    let log_alpha = model.alpha.map(|a| if a > 0.0 { a.ln() } else { f64::NEG_INFINITY });
    model
        .component_log_densities(data, false)
        .into_iter()
        .map(|dens| {
            let w: [f64; K] = std::array::from_fn(|k| log_alpha[k] + dens[k]);
            log_sum_exp(&w)
        })
        .collect()
}

/// Log prior density of the component means. The anisotropic model carries
/// one prior term per probe, the isotropic model one per cluster.
pub fn log_prior(model: &MixtureModel, prior: &PriorSpec, n_samples: usize) -> f64 {
    let v = prior.variance(n_samples, model.len());
    (0..K)
        .map(|k| match model.covariance {
            Covariance::Anisotropic => model.mu[k].iter().map(|&m| log_gaussian(m, prior.tau[k], v)).sum(),
            Covariance::Isotropic => log_gaussian(model.mu[k][0], prior.tau[k], v),
        })
        .sum()
}

/// Mixture log-likelihood plus the log prior of the means.
pub fn penalized_loglik(data: &BinData<'_>, model: &MixtureModel, prior: &PriorSpec) -> f64 {
    mixture_loglik(data, model) + log_prior(model, prior, data.n_samples())
}

/// Proportions from cluster masses, dropping clusters with negligible mass.
fn proportions(mass: &mut [f64; K]) -> [f64; K] {
    for m in mass.iter_mut() {
        if *m < MIN_CLUSTER_MASS {
            *m = 0.0;
        }
    }
    let total: f64 = mass.iter().sum();
    mass.map(|m| m / total)
}

/// Isotropic update: one mean and variance per cluster.
pub fn m_step_isotropic(
    data: &BinData<'_>,
    resp: &Responsibilities,
    prior: &PriorSpec,
    current: &MixtureModel,
    variance_floor: f64,
) -> MixtureModel {
    let n = data.n_samples();
    let p = data.len();
    let pf = p as f64;
    let v = prior.variance(n, p);
    let mut mass = resp.mass();
    let alpha = proportions(&mut mass);

    let (row_sum, row_sq): (Vec<f64>, Vec<f64>) = data
        .rows()
        .map(|x| (x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>()))
        .unzip();

    let mut mu = current.mu.clone();
    let mut sigma2 = current.sigma2.clone();
    for k in 0..K {
        let s_prev = current.sigma2[k][0];
        if alpha[k] == 0.0 {
            mu[k] = vec![prior.tau[k]; p];
            sigma2[k] = vec![s_prev; p];
            continue;
        }
        let mut weighted_mean_sum = 0.0;
        for (r, &s) in resp.rows.iter().zip(&row_sum) {
            weighted_mean_sum += r[k] * s / pf;
        }
        let m = (pf * v * weighted_mean_sum + prior.tau[k] * s_prev) / (pf * v * mass[k] + s_prev);
        let mut ss = 0.0;
        for ((r, &s), &q) in resp.rows.iter().zip(&row_sum).zip(&row_sq) {
            ss += r[k] * (q - 2.0 * m * s + pf * m * m).max(0.0);
        }
        let s_new = (ss / (pf * mass[k])).max(variance_floor);
        mu[k] = vec![m; p];
        sigma2[k] = vec![s_new; p];
    }
    MixtureModel {
        alpha,
        mu,
        sigma2,
        covariance: Covariance::Isotropic,
    }
}

/// Anisotropic update: per-probe means and variances.
pub fn m_step_anisotropic(
    data: &BinData<'_>,
    resp: &Responsibilities,
    prior: &PriorSpec,
    current: &MixtureModel,
    variance_floor: f64,
) -> MixtureModel {
    let n = data.n_samples();
    let p = data.len();
    let v = prior.variance(n, p);
    let mut mass = resp.mass();
    let alpha = proportions(&mut mass);

    let mut mu = current.mu.clone();
    let mut sigma2 = current.sigma2.clone();
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p];
    for k in 0..K {
        if alpha[k] == 0.0 {
            mu[k] = vec![prior.tau[k]; p];
            continue;
        }
        s1.iter_mut().for_each(|x| *x = 0.0);
        s2.iter_mut().for_each(|x| *x = 0.0);
        for (x, r) in data.rows().zip(&resp.rows) {
            let b = r[k];
            if b == 0.0 {
                continue;
            }
            for j in 0..p {
                let bx = b * x[j];
                s1[j] += bx;
                s2[j] += bx * x[j];
            }
        }
        let w = mass[k];
        for j in 0..p {
            let s_prev = current.sigma2[k][j];
            let m = (v * s1[j] + prior.tau[k] * s_prev) / (v * w + s_prev);
            let ss = (s2[j] - 2.0 * m * s1[j] + w * m * m).max(0.0);
            mu[k][j] = m;
            sigma2[k][j] = (ss / w).max(variance_floor);
        }
    }
    MixtureModel {
        alpha,
        mu,
        sigma2,
        covariance: Covariance::Anisotropic,
    }
}

pub fn m_step(
    data: &BinData<'_>,
    resp: &Responsibilities,
    prior: &PriorSpec,
    current: &MixtureModel,
    opts: &FitOptions,
) -> MixtureModel {
    match opts.covariance {
        Covariance::Isotropic => m_step_isotropic(data, resp, prior, current, opts.variance_floor),
        Covariance::Anisotropic => m_step_anisotropic(data, resp, prior, current, opts.variance_floor),
    }
}

/// Initializes from the data and runs EM to convergence.
pub fn fit(data: &BinData<'_>, prior: &PriorSpec, opts: &FitOptions, seed: u64) -> FitResult {
    let init = init_params(data, prior, opts.covariance, opts.variance_floor, seed);
    let mut res = fit_from(data, prior, opts, init.model);
    res.degenerate = init.degenerate;
    res
}

/// Runs EM from `start` until the relative change of the penalized objective
/// drops below `opts.tol` or `opts.max_iter` M-steps have been taken.
pub fn fit_from(data: &BinData<'_>, prior: &PriorSpec, opts: &FitOptions, start: MixtureModel) -> FitResult {
    assert!(opts.max_iter >= 1 && opts.tol > 0.0);
    let n = data.n_samples();
    let mut model = start;
    model.covariance = opts.covariance;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (resp, ll) = e_step_ll(data, &model);
        let obj = ll + log_prior(&model, prior, n);
        if let Some(&prev) = trace.last() {
            let rel = (obj - prev).abs() / f64::max(prev.abs(), 1.0);
            if rel < opts.tol {
                converged = true;
            }
        }
        trace.push(obj);
        if converged || iterations == opts.max_iter {
            return FitResult {
                model,
                responsibilities: resp,
                penalized_loglik: obj,
                iterations,
                converged,
                trace,
                degenerate: false,
            };
        }
        model = m_step(data, &resp, prior, &model, opts);
        iterations += 1;
    }
}
