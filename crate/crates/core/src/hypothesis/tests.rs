use super::*;
use crate::matrix::{Group, IntensityMatrix};
use crate::mixture::{Covariance, DEFAULT_TAU};
use rand_distr::{Distribution, Normal};

fn matrix(group: Group, rows: Vec<Vec<f64>>) -> IntensityMatrix {
    IntensityMatrix::from_rows(group, &rows).unwrap()
}

fn model(alpha: [f64; K], mu: [f64; K], sd: [f64; K], p: usize) -> MixtureModel {
    let mut m = MixtureModel::isotropic(alpha, mu, sd.map(|s| s * s), p);
    m.covariance = Covariance::Anisotropic;
    m
}

/// Draws `n` samples of length `p`, sample `i` in state `states[i]`.
fn draw(group: Group, states: &[usize], mu: [f64; K], sd: [f64; K], p: usize, seed: u64) -> IntensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = states
        .iter()
        .map(|&s| {
            let d = Normal::new(mu[s], sd[s]).unwrap();
            (0..p).map(|_| d.sample(&mut rng)).collect()
        })
        .collect();
    matrix(group, rows)
}

const SD: [f64; K] = [0.2, 0.1, 0.1, 0.1, 0.2];

#[test]
fn shared_update_hand_value() {
    let (c, t) = h0_update(
        TestVariant::Full,
        &[10.0, 0.0, 90.0, 0.0, 0.0],
        &[30.0, 0.0, 70.0, 0.0, 0.0],
        &[0.1, 0.0, 0.9, 0.0, 0.0],
        &[0.3, 0.0, 0.7, 0.0, 0.0],
    );
    assert_eq!(c, t);
    assert!((c[0] - 0.2).abs() < 1e-15 && (c[2] - 0.8).abs() < 1e-15);
}

#[test]
fn shared_update_one_sided_cluster() {
    let (c, _) = h0_update(
        TestVariant::Full,
        &[0.0, 0.0, 50.0, 0.0, 0.0],
        &[0.0, 0.0, 142.0, 8.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.95, 0.05, 0.0],
    );
    assert!((c[3] - 8.0 / 200.0).abs() < 1e-15);
}

#[test]
fn deletion_update_hand_value() {
    // Pooled CN 0/1: (0 + 0) / 20 and (1 + 1) / 20. Remaining 0.9 split by
    // each group's own masses on CN 2..4: case (7, 2, 0) / 9, control (8, 0, 1) / 9.
    let (c, t) = h0_update(
        TestVariant::Deletion,
        &[0.0, 1.0, 7.0, 2.0, 0.0],
        &[0.0, 1.0, 8.0, 0.0, 1.0],
        &[0.0; K],
        &[0.0; K],
    );
    let expect_c = [0.0, 0.1, 0.7, 0.2, 0.0];
    let expect_t = [0.0, 0.1, 0.8, 0.0, 0.1];
    for k in 0..K {
        assert!((c[k] - expect_c[k]).abs() < 1e-15, "{c:?}");
        assert!((t[k] - expect_t[k]).abs() < 1e-15, "{t:?}");
    }
}

#[test]
fn duplication_update_keeps_groups_normalized() {
    let (c, t) = h0_update(
        TestVariant::Duplication,
        &[3.0, 5.0, 80.0, 10.0, 2.0],
        &[0.0, 10.0, 170.0, 16.0, 4.0],
        &[0.0; K],
        &[0.0; K],
    );
    assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((c[3] - 26.0 / 300.0).abs() < 1e-15 && c[3] == t[3] && c[4] == t[4]);
    // CN 0..2 keep each group's ratios.
    assert!((c[0] / c[2] - 3.0 / 80.0).abs() < 1e-14);
    assert!((t[1] / t[2] - 10.0 / 170.0).abs() < 1e-14);
}

#[test]
fn empty_rest_keeps_previous_ratios() {
    let (c, _) = h0_update(
        TestVariant::Deletion,
        &[0.0, 10.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0, 10.0, 0.0, 0.0],
        &[0.0, 0.5, 0.25, 0.25, 0.0],
        &[0.0, 0.0, 1.0, 0.0, 0.0],
    );
    assert!((c[1] - 0.5).abs() < 1e-15);
    assert!((c[2] - 0.25).abs() < 1e-15 && (c[3] - 0.25).abs() < 1e-15);
}

#[test]
fn degrees_of_freedom_follow_support() {
    let s3 = [false, true, true, true, false];
    assert_eq!(degrees_of_freedom(TestVariant::Full, &s3), 2);
    assert_eq!(degrees_of_freedom(TestVariant::Deletion, &s3), 1);
    assert_eq!(degrees_of_freedom(TestVariant::Duplication, &s3), 1);
    let all = [true; K];
    assert_eq!(degrees_of_freedom(TestVariant::Full, &all), 4);
    assert_eq!(degrees_of_freedom(TestVariant::Deletion, &all), 2);
    let one = [false, false, true, false, false];
    assert_eq!(degrees_of_freedom(TestVariant::Full, &one), 0);
    let del_only = [false, true, false, false, false];
    assert_eq!(degrees_of_freedom(TestVariant::Deletion, &del_only), 0);
}

fn two_groups(seed: u64) -> (IntensityMatrix, IntensityMatrix, MixtureModel, MixtureModel) {
    let mu = [-1.3, -0.5, 0.0, 0.4, 0.73];
    let case_states: Vec<usize> = (0..20).map(|i| if i < 6 { 1 } else if i < 8 { 3 } else { 2 }).collect();
    let ctrl_states: Vec<usize> = (0..20).map(|i| if i < 2 { 1 } else if i < 6 { 3 } else { 2 }).collect();
    let case = draw(Group::Case, &case_states, mu, SD, 3, seed);
    let ctrl = draw(Group::Control, &ctrl_states, mu, SD, 3, seed + 1);
    let mc = model([0.0, 0.3, 0.6, 0.1, 0.0], mu, SD, 3);
    let mt = model([0.0, 0.1, 0.7, 0.2, 0.0], mu, SD, 3);
    (case, ctrl, mc, mt)
}

#[test]
fn identical_groups_reproduce_h1() {
    let (case, _, mc, _) = two_groups(1);
    let ctrl = matrix(Group::Control, (0..20).map(|i| case.row(i).to_vec()).collect());
    for h0 in [
        fit_h0_shared(&case.full(), &ctrl.full(), &mc, &mc),
        fit_h0_deletion(&case.full(), &ctrl.full(), &mc, &mc),
        fit_h0_duplication(&case.full(), &ctrl.full(), &mc, &mc),
    ] {
        assert!(h0.converged);
        for k in 0..K {
            assert!((h0.case[k] - h0.control[k]).abs() < 1e-6);
        }
    }
    let out = test_with_models(&case.full(), &ctrl.full(), &mc, &mc, &[TestVariant::Full]);
    assert!(out[0].lambda < 1e-6);
    assert!(out[0].p_value > 0.99);
}

#[test]
fn single_cluster_everywhere() {
    let states = vec![2; 10];
    let case = draw(Group::Case, &states, DEFAULT_TAU, SD, 4, 3);
    let ctrl = draw(Group::Control, &states, DEFAULT_TAU, SD, 4, 4);
    let m = model([0.0, 0.0, 1.0, 0.0, 0.0], DEFAULT_TAU, SD, 4);
    let h0 = fit_h0_deletion(&case.full(), &ctrl.full(), &m, &m);
    assert_eq!(h0.case, [0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(h0.control, [0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn constrained_fits_sum_to_one() {
    let (case, ctrl, mc, mt) = two_groups(5);
    for h0 in [
        fit_h0_shared(&case.full(), &ctrl.full(), &mc, &mt),
        fit_h0_deletion(&case.full(), &ctrl.full(), &mc, &mt),
        fit_h0_duplication(&case.full(), &ctrl.full(), &mc, &mt),
    ] {
        assert!((h0.case.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((h0.control.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

fn mirror_model(m: &MixtureModel) -> MixtureModel {
    MixtureModel {
        alpha: std::array::from_fn(|k| m.alpha[K - 1 - k]),
        mu: std::array::from_fn(|k| m.mu[K - 1 - k].iter().map(|x| -x).collect()),
        sigma2: std::array::from_fn(|k| m.sigma2[K - 1 - k].clone()),
        covariance: m.covariance,
    }
}

fn mirror_matrix(m: &IntensityMatrix) -> IntensityMatrix {
    let rows = (0..m.n_samples()).map(|i| m.row(i).iter().map(|x| -x).collect()).collect();
    matrix(m.group(), rows)
}

#[test]
fn duplication_mirrors_deletion() {
    let (case, ctrl, mc, mt) = two_groups(9);
    let del = fit_h0_deletion(&case.full(), &ctrl.full(), &mc, &mt);
    let (rc, rt) = (mirror_matrix(&case), mirror_matrix(&ctrl));
    let dup = fit_h0_duplication(&rc.full(), &rt.full(), &mirror_model(&mc), &mirror_model(&mt));
    for k in 0..K {
        assert!((del.case[k] - dup.case[K - 1 - k]).abs() < 1e-8);
        assert!((del.control[k] - dup.control[K - 1 - k]).abs() < 1e-8);
    }
}

/// Direct evaluation of a five-component diagonal Gaussian mixture.
fn brute_loglik(m: &IntensityMatrix, model: &MixtureModel) -> f64 {
    (0..m.n_samples())
        .map(|i| {
            let x = m.row(i);
            let h: f64 = (0..K)
                .map(|k| {
                    let mut dens = model.alpha[k];
                    for j in 0..x.len() {
                        let s2 = model.sigma2[k][j];
                        dens *= (-(x[j] - model.mu[k][j]).powi(2) / (2.0 * s2)).exp()
                            / (2.0 * std::f64::consts::PI * s2).sqrt();
                    }
                    dens
                })
                .sum();
            h.ln()
        })
        .sum()
}

#[test]
fn lr_statistic_matches_direct_evaluation() {
    let mu = [-1.3, -0.5, 0.0, 0.6, 0.9];
    let case_states: Vec<usize> = (0..20).map(|i| if i % 2 == 0 { 2 } else { 3 }).collect();
    let case = draw(Group::Case, &case_states, mu, SD, 2, 21);
    let ctrl = draw(Group::Control, &[2; 20], mu, SD, 2, 22);
    let mc = model([0.0, 0.0, 0.5, 0.5, 0.0], mu, SD, 2);
    let mt = model([0.0, 0.0, 1.0, 0.0, 0.0], mu, SD, 2);
    let h0 = fit_h0_shared(&case.full(), &ctrl.full(), &mc, &mt);
    let (c0, t0) = (mc.with_alpha(h0.case), mt.with_alpha(h0.control));
    let lambda = lr_statistic(&case.full(), &ctrl.full(), &mc, &mt, &c0, &t0);
    let direct = brute_loglik(&case, &mc) + brute_loglik(&ctrl, &mt) - brute_loglik(&case, &c0) - brute_loglik(&ctrl, &t0);
    assert!(lambda > 0.0);
    assert!((lambda - direct).abs() < 1e-9 * direct.abs().max(1.0), "{lambda} vs {direct}");
    assert_eq!(lr_statistic(&case.full(), &ctrl.full(), &mc, &mt, &mc, &mt), 0.0);
}

#[test]
fn full_statistic_dominates_partial_ones() {
    for seed in 0..5 {
        let (case, ctrl, mc, mt) = two_groups(100 + seed);
        let out = test_with_models(
            &case.full(),
            &ctrl.full(),
            &mc,
            &mt,
            &[TestVariant::Full, TestVariant::Deletion, TestVariant::Duplication],
        );
        assert!(out[0].lambda >= out[1].lambda - 1e-6);
        assert!(out[0].lambda >= out[2].lambda - 1e-6);
        assert!(out.iter().all(|o| o.converged));
    }
}

#[test]
fn summed_collapses_to_bin_statistic() {
    let (case, ctrl, mc, mt) = two_groups(31);
    let out = test_with_models(&case.full(), &ctrl.full(), &mc, &mt, &[TestVariant::Full]).remove(0);
    let s = summed_lr(
        &[case.full()],
        &[ctrl.full()],
        &out.h1_case,
        &out.h1_control,
        &out.h0.case,
        &out.h0.control,
    )
    .unwrap();
    assert!((s - out.lambda).abs() < 1e-9);
    let zero = summed_lr(&[case.full()], &[ctrl.full()], &mc, &mt, &mc.alpha, &mt.alpha).unwrap();
    assert_eq!(zero, 0.0);
}

#[test]
fn summed_rejects_mismatched_bins() {
    let (case, ctrl, mc, mt) = two_groups(2);
    let c = [crate::matrix::slice(&case, crate::matrix::Bin::new(0, 2)).unwrap()];
    let t = [crate::matrix::slice(&ctrl, crate::matrix::Bin::new(0, 2)).unwrap()];
    let err = summed_lr(&c, &t, &mc, &mt, &mc.alpha, &mt.alpha).unwrap_err();
    assert!(matches!(err, CnvError::BinMismatch(_)));
    let err = summed_lr(&c, &[], &mc, &mt, &mc.alpha, &mt.alpha).unwrap_err();
    assert!(matches!(err, CnvError::BinMismatch(_)));
}

#[test]
fn summed_test_detects_clear_difference() {
    let mu = [-1.3, -0.5, 0.0, 0.4, 0.73];
    let case_states: Vec<usize> = (0..40).map(|i| if i < 12 { 1 } else { 2 }).collect();
    let case = draw(Group::Case, &case_states, mu, SD, 6, 41);
    let ctrl = draw(Group::Control, &[2; 40], mu, SD, 6, 42);
    fn bins(m: &IntensityMatrix) -> Vec<BinData<'_>> {
        (0..3)
            .map(|b| crate::matrix::slice(m, crate::matrix::Bin::new(2 * b, 2 * b + 2)).unwrap())
            .collect()
    }
    let mc = model([0.0, 0.3, 0.7, 0.0, 0.0], mu, SD, 6);
    let mt = model([0.0, 0.02, 0.98, 0.0, 0.0], mu, SD, 6);
    let opts = PermutationOptions {
        n_perm: 199,
        seed: 3,
        ..PermutationOptions::default()
    };
    let out = summed_lr_test(&bins(&case), &bins(&ctrl), &mc, &mt, &opts).unwrap();
    assert!(out.lambda > 5.0);
    assert!((out.p_value - 1.0 / 200.0).abs() < 1e-12, "{}", out.p_value);
    assert!((out.alpha_case[1] - 0.3).abs() < 0.05);
    let again = summed_lr_test(&bins(&case), &bins(&ctrl), &mc, &mt, &opts).unwrap();
    assert_eq!(out, again);
}

#[test]
fn test_bin_identical_groups() {
    let states: Vec<usize> = (0..60).map(|i| if i % 5 == 0 { 1 } else { 2 }).collect();
    let case = draw(Group::Case, &states, DEFAULT_TAU, [0.3; K], 10, 7);
    let ctrl = matrix(Group::Control, (0..60).map(|i| case.row(i).to_vec()).collect());
    let out = test_bin(
        &case.full(),
        &ctrl.full(),
        TestVariant::Full,
        &PriorSpec::default(),
        &FitOptions::default(),
        11,
    );
    assert!(out.p_value > 0.99, "{out:?}");
}

#[test]
fn variant_names_round_trip() {
    for v in TestVariant::ALL {
        assert_eq!(v.as_str().parse::<TestVariant>().unwrap(), v);
    }
    assert!("both".parse::<TestVariant>().is_err());
}
