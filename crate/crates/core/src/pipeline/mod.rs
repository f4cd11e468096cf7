//! End-to-end commands: simulate, per-bin testing, merge and report.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{PermutationConfig, PipelineConfig};

use crate::error::{CnvError, Result};
use crate::hypothesis::{summed_lr_test, test_bin_variants, test_with_models, TestOutcome, TestVariant};
use crate::matrix::{load_matrix, partition_bins, slice, Bin, BinData, Group, IntensityMatrix};
use crate::merge::{initial_segments, merge_pass, Segment};
use crate::mixture::K;
use crate::simulation::{generate_dataset, ScenarioConfig};
use crate::stats::derive_seed;

const TEST_SALT: u64 = 0x7E57;
const SEGMENT_SALT: u64 = 0x5E97;
const PERMUTATION_SALT: u64 = 0x9E3;

/// Test results for one bin.
#[derive(Debug, Clone)]
pub struct BinReport {
    pub index: usize,
    pub span: Bin,
    pub outcomes: Vec<TestOutcome>,
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CnvError::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

fn check_pair(case: &IntensityMatrix, control: &IntensityMatrix) -> Result<()> {
    if case.n_probes() != control.n_probes() {
        return Err(CnvError::ProbeCountMismatch {
            case: case.n_probes(),
            control: control.n_probes(),
        });
    }
    Ok(())
}

/// Tests every bin with each configured variant. Results are ordered by bin
/// and do not depend on the number of threads.
pub fn run_tests(case: &IntensityMatrix, control: &IntensityMatrix, cfg: &PipelineConfig) -> Result<Vec<BinReport>> {
    cfg.validate()?;
    check_pair(case, control)?;
    let bins = partition_bins(case.n_probes(), cfg.bin_size)?;
    bins.par_iter()
        .enumerate()
        .map(|(b, &bin)| {
            let outcomes = test_bin_variants(
                &slice(case, bin)?,
                &slice(control, bin)?,
                &cfg.test_variants,
                &cfg.prior,
                &cfg.em,
                derive_seed(cfg.seed, b as u64, TEST_SALT),
            );
            Ok(BinReport {
                index: b,
                span: bin,
                outcomes,
            })
        })
        .collect()
}

/// Merges bins into segments, then re-tests each segment with the merge
/// variants. The summed variant is scored on the segment's member bins.
pub fn run_merge(case: &IntensityMatrix, control: &IntensityMatrix, cfg: &PipelineConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    check_pair(case, control)?;
    let bins = partition_bins(case.n_probes(), cfg.bin_size)?;
    let initial = initial_segments(
        case,
        control,
        &bins,
        &cfg.prior,
        &cfg.em,
        &cfg.merge,
        derive_seed(cfg.seed, 0, SEGMENT_SALT),
    )?;
    let mut segments = merge_pass(initial, case, control, &cfg.merge, &cfg.prior, &cfg.em)?;
    let chi: Vec<TestVariant> = cfg
        .merge_variants
        .iter()
        .copied()
        .filter(|&v| v != TestVariant::Summed)
        .collect();
    let summed = cfg.merge_variants.contains(&TestVariant::Summed);
    segments
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(s, seg)| -> Result<()> {
            let hc = &seg.case.fit.model;
            let ht = &seg.control.fit.model;
            let mut by_variant = test_with_models(&slice(case, seg.span)?, &slice(control, seg.span)?, hc, ht, &chi);
            for o in &mut by_variant {
                o.converged &= seg.converged();
            }
            if summed {
                let members = &bins[seg.first_bin..seg.end_bin];
                let cb: Vec<BinData<'_>> = members.iter().map(|&b| slice(case, b)).collect::<Result<_>>()?;
                let tb: Vec<BinData<'_>> = members.iter().map(|&b| slice(control, b)).collect::<Result<_>>()?;
                let opts = cfg
                    .permutation
                    .with_seed(derive_seed(cfg.seed, s as u64, PERMUTATION_SALT));
                let mut o = summed_lr_test(&cb, &tb, hc, ht, &opts)?.into_outcome(hc, ht);
                o.converged &= seg.converged();
                by_variant.push(o);
            }
            // Keep the configured variant order.
            seg.outcomes = cfg
                .merge_variants
                .iter()
                .filter_map(|v| by_variant.iter().find(|o| o.variant == *v).cloned())
                .collect();
            Ok(())
        })?;
    Ok(segments)
}

fn non_normal_mass(variant: TestVariant, alpha: &[f64; K]) -> f64 {
    match variant {
        TestVariant::Deletion => alpha[0] + alpha[1],
        TestVariant::Duplication => alpha[3] + alpha[4],
        TestVariant::Full | TestVariant::Summed => 1.0 - alpha[2],
    }
}

/// Which group carries more of the copy-number states the variant tests.
pub fn direction(outcome: &TestOutcome) -> &'static str {
    let c = non_normal_mass(outcome.variant, &outcome.h1_case.alpha);
    let t = non_normal_mass(outcome.variant, &outcome.h1_control.alpha);
    if (c - t).abs() <= 1e-9 {
        "none"
    } else if c > t {
        "case"
    } else {
        "control"
    }
}

fn write_header<W: Write>(out: &mut W, extra: &[&str]) -> std::io::Result<()> {
    write!(out, "start_probe\tend_probe\tvariant\tlambda\tdf\tp_value")?;
    for k in 0..K {
        write!(out, "\talpha_case_{k}")?;
    }
    for k in 0..K {
        write!(out, "\talpha_ctrl_{k}")?;
    }
    write!(out, "\tconverged")?;
    for e in extra {
        write!(out, "\t{e}")?;
    }
    writeln!(out)
}

fn write_outcome<W: Write>(out: &mut W, span: Bin, o: &TestOutcome) -> std::io::Result<()> {
    write!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}",
        span.start, span.end, o.variant, o.lambda, o.df, o.p_value
    )?;
    for a in o.h1_case.alpha.iter().chain(&o.h1_control.alpha) {
        write!(out, "\t{a}")?;
    }
    write!(out, "\t{}", o.converged)
}

/// Per-bin report, one row per bin and variant. `end_probe` is exclusive.
pub fn write_bin_report<W: Write>(out: &mut W, reports: &[BinReport]) -> std::io::Result<()> {
    write_header(out, &[])?;
    for r in reports {
        for o in &r.outcomes {
            write_outcome(out, r.span, o)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Segment report: the per-bin columns plus the probe IDs bounding the
/// segment (inclusive) and the enriched group.
pub fn write_segment_report<W: Write>(out: &mut W, segments: &[Segment], probe_ids: &[String]) -> std::io::Result<()> {
    write_header(out, &["start_id", "end_id", "direction"])?;
    for s in segments {
        for o in &s.outcomes {
            write_outcome(out, s.span, o)?;
            writeln!(
                out,
                "\t{}\t{}\t{}",
                probe_ids[s.span.start],
                probe_ids[s.span.end - 1],
                direction(o)
            )?;
        }
    }
    Ok(())
}

/// Plot data: segment midpoint and `-log10 p` per variant.
pub fn write_plot_data<W: Write>(out: &mut W, segments: &[Segment]) -> std::io::Result<()> {
    writeln!(out, "midpoint\tvariant\tneg_log10_p")?;
    for s in segments {
        for o in &s.outcomes {
            let p = o.p_value.max(f64::MIN_POSITIVE);
            writeln!(out, "{}\t{}\t{}", s.span.midpoint(), o.variant, -p.log10() + 0.0)?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| CnvError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CnvError::io(path, e))
}

/// Generates one dataset and writes `case.tsv`, `control.tsv`, `truth.tsv`
/// and `manifest.toml` (the effective scenario, seed included) to `out_dir`.
pub fn cmd_simulate(scenario: &ScenarioConfig, out_dir: &Path) -> Result<()> {
    scenario.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CnvError::io(out_dir, e))?;
    let (case, control, truth) = generate_dataset(scenario)?;
    case.write_tsv(out_dir.join("case.tsv"))?;
    control.write_tsv(out_dir.join("control.tsv"))?;
    truth.write_tsv(out_dir.join("truth.tsv"))?;
    let manifest = out_dir.join("manifest.toml");
    write_file(&manifest, |w| w.write_all(scenario.to_toml().as_bytes()))
}

fn load_pair(case: &Path, control: &Path) -> Result<(IntensityMatrix, IntensityMatrix)> {
    let c = load_matrix(case, Group::Case)?;
    let t = load_matrix(control, Group::Control)?;
    check_pair(&c, &t)?;
    Ok((c, t))
}

pub fn cmd_test(case: &Path, control: &Path, cfg: &PipelineConfig, out: &Path) -> Result<Vec<BinReport>> {
    cfg.validate()?;
    let (c, t) = load_pair(case, control)?;
    let reports = with_workers(cfg.workers, || run_tests(&c, &t, cfg))??;
    write_file(out, |w| write_bin_report(w, &reports))?;
    Ok(reports)
}

/// Path of the plot-data file written next to a merge report.
pub fn plot_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.plot.tsv"))
}

pub fn cmd_merge_and_report(case: &Path, control: &Path, cfg: &PipelineConfig, out: &Path) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let (c, t) = load_pair(case, control)?;
    let segments = with_workers(cfg.workers, || run_merge(&c, &t, cfg))??;
    write_file(out, |w| write_segment_report(w, &segments, c.probe_ids()))?;
    write_file(&plot_path(out), |w| write_plot_data(w, &segments))?;
    Ok(segments)
}
