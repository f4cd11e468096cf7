use cnv_assoc::hypothesis::TestVariant;
use cnv_assoc::matrix::Bin;
use cnv_assoc::pipeline::{run_merge, run_tests, PipelineConfig};
use cnv_assoc::simulation::{generate_dataset, CnvType, Frequency, RegionSpec, ScenarioConfig};

fn overlap(a: Bin, b: Bin) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

#[test]
fn desk_high_frequency_regions_hit_significant_bins() {
    let sc = ScenarioConfig::desk(Frequency::High, false, false, 21);
    let (case, control, truth) = generate_dataset(&sc).unwrap();
    let cfg = PipelineConfig {
        test_variants: vec![TestVariant::Full],
        ..PipelineConfig::default()
    };
    let reports = run_tests(&case, &control, &cfg).unwrap();
    let hit = truth
        .designed()
        .filter(|r| {
            reports
                .iter()
                .any(|b| overlap(b.span, r.span) > 0 && b.outcomes[0].p_value < 0.05)
        })
        .count();
    assert!(hit >= 9, "{hit} of 10 regions hit");
}

#[test]
fn null_data_rarely_significant() {
    let mut sc = ScenarioConfig::desk(Frequency::High, false, false, 22);
    sc.regions.clear();
    sc.vary_var2_regions = 0;
    let (case, control, _) = generate_dataset(&sc).unwrap();
    let reports = run_tests(&case, &control, &PipelineConfig::default()).unwrap();
    let sig = reports.iter().filter(|r| r.outcomes[0].p_value < 0.05).count();
    assert!((sig as f64) < 0.1 * reports.len() as f64, "{sig} of {} bins", reports.len());
}

fn small_merge_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.permutation.n_perm = 199;
    cfg
}

#[test]
fn homogeneous_data_is_one_quiet_segment() {
    let mut sc = ScenarioConfig::desk(Frequency::High, false, false, 23);
    sc.n_probes = 200;
    sc.regions.clear();
    sc.vary_var2_regions = 0;
    let (case, control, _) = generate_dataset(&sc).unwrap();
    let segs = run_merge(&case, &control, &small_merge_config()).unwrap();
    assert_eq!(segs.len(), 1);
    assert_eq!(segs[0].outcomes.len(), 4);
    for o in &segs[0].outcomes {
        assert!(o.p_value > 0.05, "{} p = {}", o.variant, o.p_value);
    }
}

#[test]
fn long_deletion_is_reported_by_the_deletion_test() {
    let mut sc = ScenarioConfig::desk(Frequency::Mid, false, false, 24);
    sc.n_probes = 1000;
    sc.vary_var2_regions = 0;
    sc.regions = vec![RegionSpec {
        length: 500,
        cnv_type: CnvType::Deletion,
        replicates: 1,
    }];
    let (case, control, truth) = generate_dataset(&sc).unwrap();
    let region = truth.designed().next().unwrap().span;
    let segs = run_merge(&case, &control, &small_merge_config()).unwrap();
    let seg = segs
        .iter()
        .find(|s| 2 * overlap(s.span, region) > region.len())
        .expect("a segment covers most of the region");
    let p = |v: TestVariant| seg.outcomes.iter().find(|o| o.variant == v).unwrap().p_value;
    assert!(p(TestVariant::Full) < 0.05);
    // Tying only the deletion states spends fewer degrees of freedom on the
    // same signal.
    assert!(p(TestVariant::Deletion) <= p(TestVariant::Full));
}
