//! Property tests for the invariants each module promises.

use cnv_assoc::hypothesis::{test_with_models, TestVariant};
use cnv_assoc::matrix::{parse_matrix, partition_bins, slice, Bin, Group, IntensityMatrix};
use cnv_assoc::merge::{initial_segments, merge_pass, MergeConfig};
use cnv_assoc::mixture::{
    e_step, fit, m_step, Covariance, FitOptions, MixtureModel, PriorSpec, DEFAULT_TAU, K,
};
use cnv_assoc::pipeline::PipelineConfig;
use cnv_assoc::simulation::{generate_dataset, Frequency, ScenarioConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Samples drawn from a random subset of copy-number states, each sample
/// keeping its state over all probes.
fn mixture_matrix(group: Group, n: usize, p: usize, seed: u64) -> IntensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<usize> = (0..K).filter(|&k| k == 2 || rng.random_bool(0.4)).collect();
    let sd = rng.random_range(0.1..0.35);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let s = if rng.random_bool(0.7) { 2 } else { states[rng.random_range(0..states.len())] };
            let d = Normal::new(DEFAULT_TAU[s], sd).unwrap();
            (0..p).map(|_| d.sample(&mut rng)).collect()
        })
        .collect();
    IntensityMatrix::from_rows(group, &rows).unwrap()
}

fn opts(covariance: Covariance) -> FitOptions {
    FitOptions {
        covariance,
        ..FitOptions::default()
    }
}

fn covariance() -> impl Strategy<Value = Covariance> {
    prop_oneof![Just(Covariance::Isotropic), Just(Covariance::Anisotropic)]
}

fn max_abs_diff(a: &MixtureModel, b: &MixtureModel) -> f64 {
    let mut d: f64 = 0.0;
    for k in 0..K {
        d = d.max((a.alpha[k] - b.alpha[k]).abs());
        for j in 0..a.len() {
            d = d.max((a.mu[k][j] - b.mu[k][j]).abs());
            d = d.max((a.sigma2[k][j] - b.sigma2[k][j]).abs());
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bins_tile_the_probe_axis(n in 1usize..500, size in 1usize..40) {
        let bins = partition_bins(n, size).unwrap();
        let mut next = 0;
        for b in &bins {
            prop_assert_eq!(b.start, next);
            prop_assert!(b.end > b.start);
            next = b.end;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn tsv_round_trip_keeps_values(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 2..8),
    ) {
        let m = IntensityMatrix::from_rows(Group::Case, &rows).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let again = parse_matrix(std::str::from_utf8(&buf).unwrap(), Group::Case).unwrap();
        prop_assert_eq!(again.values(), m.values());
        let mut buf2 = Vec::new();
        again.write_to(&mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);
    }

    #[test]
    fn em_is_monotone_and_normalized(
        seed in any::<u64>(), n in 10usize..120, p in 5usize..30, cov in covariance(),
    ) {
        let m = mixture_matrix(Group::Case, n, p, seed);
        let data = m.full();
        let res = fit(&data, &PriorSpec::default(), &opts(cov), seed);
        for w in res.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8, "objective fell from {} to {}", w[0], w[1]);
        }
        prop_assert!(res.model.check_invariants(FitOptions::default().variance_floor));
        let resp = e_step(&data, &res.model);
        for r in &resp.rows {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let next = m_step(&data, &resp, &PriorSpec::default(), &res.model, &opts(cov));
        prop_assert!((next.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn copied_columns_make_both_variants_agree(seed in any::<u64>(), n in 10usize..80, p in 2usize..12) {
        let base = mixture_matrix(Group::Case, n, 1, seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![base.get(i, 0); p]).collect();
        let m = IntensityMatrix::from_rows(Group::Case, &rows).unwrap();
        let data = m.full();
        let start = MixtureModel::isotropic([0.1, 0.15, 0.5, 0.15, 0.1], DEFAULT_TAU, [0.05; K], p);
        let resp = e_step(&data, &start);
        // The isotropic mean weighs its single prior term against p probes,
        // the anisotropic one against one probe, so the two only coincide
        // once the prior is flat. Under the default prior both stay constant
        // across probes.
        for (prior, equal) in [(PriorSpec::default().fixed(1e20), true), (PriorSpec::default(), false)] {
            let iso = m_step(&data, &resp, &prior, &start, &opts(Covariance::Isotropic));
            let aniso = m_step(&data, &resp, &prior, &start, &opts(Covariance::Anisotropic));
            for k in 0..K {
                prop_assert!((iso.alpha[k] - aniso.alpha[k]).abs() < 1e-12);
                for j in 0..p {
                    prop_assert!((iso.mu[k][j] - iso.mu[k][0]).abs() < 1e-12);
                    prop_assert!((aniso.mu[k][j] - aniso.mu[k][0]).abs() < 1e-9);
                    prop_assert!((aniso.sigma2[k][j] - aniso.sigma2[k][0]).abs() < 1e-9);
                    if equal {
                        prop_assert!((iso.mu[k][j] - aniso.mu[k][j]).abs() < 1e-9);
                        prop_assert!((iso.sigma2[k][j] - aniso.sigma2[k][j]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn tight_prior_pins_absent_clusters(seed in any::<u64>(), n in 50usize..200, p in 10usize..50, cov in covariance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.3).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| d.sample(&mut rng)).collect()).collect();
        let m = IntensityMatrix::from_rows(Group::Case, &rows).unwrap();
        let prior = PriorSpec::default().fixed(0.01);
        let res = fit(&m.full(), &prior, &opts(cov), seed);
        for k in [0, 1, 3, 4] {
            for &mu in &res.model.mu[k] {
                prop_assert!((mu - DEFAULT_TAU[k]).abs() < 0.05, "state {} mean {}", k, mu);
            }
        }
    }

    #[test]
    fn fit_ignores_sample_order(seed in any::<u64>(), n in 10usize..80, p in 5usize..20, cov in covariance()) {
        let m = mixture_matrix(Group::Case, n, p, seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let shuffled = m.permute_rows(&order);
        let prior = PriorSpec::default();
        let a = fit(&m.full(), &prior, &opts(cov), 7);
        let b = fit(&shuffled.full(), &prior, &opts(cov), 7);
        prop_assert!(max_abs_diff(&a.model, &b.model) < 1e-6);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..K {
                let d = (b.responsibilities.rows[new][k] - a.responsibilities.rows[old][k]).abs();
                prop_assert!(d < 1e-6);
            }
        }
    }

    #[test]
    fn lr_is_nonnegative_and_nested(seed in any::<u64>(), n1 in 20usize..80, n2 in 20usize..80, p in 5usize..15) {
        let case = mixture_matrix(Group::Case, n1, p, seed);
        let control = mixture_matrix(Group::Control, n2, p, seed.wrapping_add(1));
        let prior = PriorSpec::default();
        let o = FitOptions::default();
        let hc = fit(&case.full(), &prior, &o, 1).model;
        let ht = fit(&control.full(), &prior, &o, 2).model;
        let out = test_with_models(
            &case.full(),
            &control.full(),
            &hc,
            &ht,
            &[TestVariant::Full, TestVariant::Deletion, TestVariant::Duplication],
        );
        for t in &out {
            prop_assert!(t.lambda >= 0.0);
            prop_assert!((0.0..=1.0).contains(&t.p_value));
            prop_assert!((t.h0.case.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!((t.h0.control.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        prop_assert!(out[0].lambda >= out[1].lambda - 1e-6);
        prop_assert!(out[0].lambda >= out[2].lambda - 1e-6);
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>()) {
        let mut cfg = ScenarioConfig::desk(Frequency::High, true, true, seed);
        cfg.n_case = 20;
        cfg.n_control = 30;
        let (a1, b1, t1) = generate_dataset(&cfg).unwrap();
        let (a2, b2, t2) = generate_dataset(&cfg).unwrap();
        prop_assert_eq!(a1.values(), a2.values());
        prop_assert_eq!(b1.values(), b2.values());
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn pipeline_config_round_trips(
        bin_size in 3usize..50,
        significance in 0.001f64..0.5,
        workers in 1usize..32,
        seed in any::<u64>(),
        scale in 0.1f64..4.0,
        lambda_d in 0.5f64..8.0,
        lambda_c in prop::option::of(0.5f64..8.0),
        n_perm in 0usize..2000,
        iso in any::<bool>(),
    ) {
        let mut cfg = PipelineConfig::default();
        cfg.bin_size = bin_size;
        cfg.significance = significance;
        cfg.workers = workers;
        cfg.seed = seed;
        cfg.prior.scale = scale;
        cfg.merge.lambda_d = lambda_d;
        cfg.merge.lambda_c = lambda_c;
        cfg.permutation.n_perm = n_perm;
        if iso {
            cfg.em = FitOptions::isotropic();
        }
        let text = cfg.to_toml();
        let again = PipelineConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_toml(), text);
    }
}

/// Bins of pure noise on the left and a deletion carried by a fraction of
/// samples on the right, so merging has something to decide.
fn merge_inputs(seed: u64) -> (IntensityMatrix, IntensityMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.25).unwrap();
    let cut = 10 * rng.random_range(1..5);
    let mut draw = |n: usize, carriers: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let carrier = rng.random_bool(carriers);
                (0..60)
                    .map(|j| noise.sample(&mut rng) + if carrier && j >= cut { -0.5 } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    let case = draw(40, 0.4);
    let control = draw(60, 0.1);
    (
        IntensityMatrix::from_rows(Group::Case, &case).unwrap(),
        IntensityMatrix::from_rows(Group::Control, &control).unwrap(),
    )
}

fn merged_spans(case: &IntensityMatrix, control: &IntensityMatrix, config: &MergeConfig) -> Vec<Bin> {
    let prior = PriorSpec::default();
    let o = FitOptions::default();
    let bins = partition_bins(case.n_probes(), 10).unwrap();
    let init = initial_segments(case, control, &bins, &prior, &o, config, 3).unwrap();
    merge_pass(init, case, control, config, &prior, &o)
        .unwrap()
        .iter()
        .map(|s| s.span)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn merge_keeps_a_partition(seed in any::<u64>()) {
        let (case, control) = merge_inputs(seed);
        let spans = merged_spans(&case, &control, &MergeConfig::default());
        prop_assert!(!spans.is_empty() && spans.len() <= 6);
        let mut next = 0;
        for s in &spans {
            prop_assert_eq!(s.start, next);
            next = s.end;
        }
        prop_assert_eq!(next, 60);
        // Every segment is a whole number of bins.
        prop_assert!(spans.iter().all(|s| s.start % 10 == 0));
        for s in &spans {
            let d = slice(&case, *s).unwrap();
            prop_assert_eq!(d.len(), s.len());
        }
    }

    #[test]
    fn merge_ignores_sample_order(seed in any::<u64>()) {
        let (case, control) = merge_inputs(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
        let mut oc: Vec<usize> = (0..case.n_samples()).collect();
        let mut ot: Vec<usize> = (0..control.n_samples()).collect();
        oc.shuffle(&mut rng);
        ot.shuffle(&mut rng);
        let cfg = MergeConfig::default();
        prop_assert_eq!(
            merged_spans(&case, &control, &cfg),
            merged_spans(&case.permute_rows(&oc), &control.permute_rows(&ot), &cfg)
        );
    }

    #[test]
    fn larger_thresholds_merge_at_least_as_much(seed in any::<u64>(), lambda in 0.25f64..4.0) {
        let (case, control) = merge_inputs(seed);
        let base = MergeConfig { lambda_d: lambda, ..MergeConfig::default() };
        let doubled = MergeConfig { lambda_d: 2.0 * lambda, ..MergeConfig::default() };
        let a = merged_spans(&case, &control, &base).len();
        let b = merged_spans(&case, &control, &doubled).len();
        prop_assert!(b <= a, "{} segments at lambda {} but {} after doubling", a, lambda, b);
    }
}
