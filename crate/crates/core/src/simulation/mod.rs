//! Synthetic case/control cohorts with planted CNV regions.
//!
//! Every probe starts as `N(0, noise_sd^2)`. Designed regions then get
//! carriers drawn to match a case/control proportion table, and each sample's
//! values over a region come from the Gaussian of its copy-number state.
//! Optional variance-heterogeneity regions carry no CNV but give the two
//! groups different spreads.

mod evaluate;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use evaluate::{detected_regions, evaluate, Evaluation, LengthStats};

use crate::error::{CnvError, Result};
use crate::matrix::{Bin, Group, IntensityMatrix};
use crate::mixture::K;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Frequency {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CnvType {
    Deletion,
    Duplication,
}

macro_rules! string_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok(Self::$variant),)+
                    _ => Err(format!(
                        concat!("invalid ", $what, " {:?}, expected one of: ", $($name, " "),+),
                        s
                    )),
                }
            }
        }
        impl TryFrom<String> for $ty {
            type Error = String;
            fn try_from(s: String) -> std::result::Result<Self, String> {
                s.parse()
            }
        }
        impl From<$ty> for String {
            fn from(v: $ty) -> String {
                v.as_str().to_string()
            }
        }
    };
}

string_enum!(Frequency, "frequency", Low => "low", Mid => "mid", High => "high");
string_enum!(CnvType, "cnv_type", Deletion => "deletion", Duplication => "duplication");

impl Frequency {
    /// Scenario number of the proportion tables: 1 for low up to 3 for high.
    pub fn scenario(self) -> usize {
        match self {
            Self::Low => 1,
            Self::Mid => 2,
            Self::High => 3,
        }
    }
}

/// Case and control carrier fractions for CN = 0..4.
pub fn proportions(frequency: Frequency, cnv_type: CnvType) -> ([f64; K], [f64; K]) {
    use CnvType::*;
    use Frequency::*;
    match (frequency, cnv_type) {
        (Low, Deletion) => ([0.0, 0.05, 0.95, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0, 0.0]),
        (Low, Duplication) => ([0.0, 0.0, 0.95, 0.05, 0.0], [0.0, 0.0, 1.0, 0.0, 0.0]),
        (Mid, Deletion) => ([0.03, 0.1, 0.87, 0.0, 0.0], [0.01, 0.01, 0.98, 0.0, 0.0]),
        // The tabulated case row adds up to 1.08; the normal share is taken
        // as 0.87, mirroring the deletion table.
        (Mid, Duplication) => ([0.0, 0.0, 0.87, 0.1, 0.03], [0.0, 0.0, 0.98, 0.01, 0.01]),
        (High, Deletion) => ([0.17, 0.46, 0.37, 0.0, 0.0], [0.08, 0.28, 0.64, 0.0, 0.0]),
        (High, Duplication) => ([0.0, 0.0, 0.37, 0.46, 0.17], [0.0, 0.0, 0.64, 0.28, 0.08]),
    }
}

/// Per-state means and standard deviations inside CNV regions.
pub const CASE_MU: [f64; K] = [-1.3, -0.4, -0.13, 0.3, 0.63];
pub const CONTROL_MU: [f64; K] = [-1.2, -0.3, 0.15, 0.44, 0.73];
pub const CASE_SD: [f64; K] = [0.5, 0.13, 0.3, 0.18, 0.4];
pub const CONTROL_SD: [f64; K] = [0.52, 0.14, 0.31, 0.2, 0.42];

/// Lengths of the two single-variance regions and their group spreads.
pub const VARY_VAR1_LENGTHS: [usize; 2] = [20, 200];
pub const VARY_VAR1_SD: (f64, f64) = (0.9, 0.6);
/// Spreads by sub-bin index modulo 3, case then control.
pub const VARY_VAR2_SD: [(f64, f64); 3] = [(0.3, 0.6), (0.6, 0.9), (0.9, 0.3)];
pub const VARY_VAR2_SUBBIN: usize = 10;

/// Which parameter rows both groups share when there is no batch effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SharedRow {
    Case,
    #[default]
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub length: usize,
    pub cnv_type: CnvType,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_case: usize,
    pub n_control: usize,
    pub n_probes: usize,
    pub frequency: Frequency,
    pub batch_effect: bool,
    pub variance_heterogeneity: bool,
    pub regions: Vec<RegionSpec>,
    pub noise_sd: f64,
    pub seed: u64,
    /// How many normal regions become vary-var2 regions.
    pub vary_var2_regions: usize,
    /// Clear probes on each side of a vary-var1 region inside its host.
    pub margin: usize,
    pub shared_row: SharedRow,
    /// Designed regions start on multiples of this many probes; 1 places
    /// them freely.
    pub grid: usize,
}

fn standard_layout(replicates: usize) -> Vec<RegionSpec> {
    let mut out = Vec::new();
    for length in [10, 30, 50, 100, 500] {
        for cnv_type in [CnvType::Deletion, CnvType::Duplication] {
            out.push(RegionSpec {
                length,
                cnv_type,
                replicates,
            });
        }
    }
    out
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk(Frequency::High, false, false, 0)
    }
}

impl ScenarioConfig {
    /// Reduced cohort: 200 cases, 400 controls, 2000 probes, one region per
    /// length and type.
    pub fn desk(frequency: Frequency, batch_effect: bool, variance_heterogeneity: bool, seed: u64) -> Self {
        Self {
            n_case: 200,
            n_control: 400,
            n_probes: 2000,
            frequency,
            batch_effect,
            variance_heterogeneity,
            regions: standard_layout(1),
            noise_sd: 0.3,
            seed,
            vary_var2_regions: 4,
            margin: 10,
            shared_row: SharedRow::Control,
            grid: 10,
        }
    }

    /// Full scale: 1000 cases, 2000 controls, 10^4 probes, three
    /// regions per length and type, 14 vary-var2 regions.
    pub fn full_scale(frequency: Frequency, batch_effect: bool, variance_heterogeneity: bool, seed: u64) -> Self {
        Self {
            n_case: 1000,
            n_control: 2000,
            n_probes: 10_000,
            regions: standard_layout(3),
            vary_var2_regions: 14,
            ..Self::desk(frequency, batch_effect, variance_heterogeneity, seed)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CnvError::config("scenario", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_case < 2 {
            return Err(CnvError::config("n_case", "need at least 2 samples"));
        }
        if self.n_control < 2 {
            return Err(CnvError::config("n_control", "need at least 2 samples"));
        }
        if self.n_probes == 0 {
            return Err(CnvError::config("n_probes", "must be positive"));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(CnvError::config("noise_sd", "must be positive"));
        }
        if self.grid == 0 {
            return Err(CnvError::config("grid", "must be at least 1"));
        }
        if self.regions.iter().any(|r| r.length == 0) {
            return Err(CnvError::config("regions.length", "must be positive"));
        }
        self.layout().map(|_| ())
    }

    /// Designed regions in placement order, replicates expanded.
    fn designed(&self) -> Vec<(usize, CnvType)> {
        self.regions
            .iter()
            .flat_map(|r| std::iter::repeat_n((r.length, r.cnv_type), r.replicates))
            .collect()
    }

    /// Places designed regions separated by normal stretches. The first two
    /// normal stretches host the vary-var1 regions when variance
    /// heterogeneity is on and are sized to fit them; the others share the
    /// remaining probes evenly.
    pub fn layout(&self) -> Result<Layout> {
        let designed = self.designed();
        let total: usize = designed.iter().map(|d| d.0).sum();
        if total >= self.n_probes {
            return Err(CnvError::LayoutOverflow(format!(
                "{total} designed probes do not fit in {} probes",
                self.n_probes
            )));
        }
        let n_gaps = designed.len() + 1;
        let free = self.n_probes - total;
        let mut gaps = vec![0usize; n_gaps];
        let hosts = if self.variance_heterogeneity {
            VARY_VAR1_LENGTHS.len()
        } else {
            0
        };
        if hosts > 0 && n_gaps < hosts + 1 {
            return Err(CnvError::LayoutOverflow(
                "too few normal regions to host the variance regions".into(),
            ));
        }
        let mut reserved = 0;
        for (g, &len) in VARY_VAR1_LENGTHS.iter().enumerate().take(hosts) {
            gaps[g] = (len + 2 * self.margin).next_multiple_of(self.grid);
            reserved += gaps[g];
        }
        let rest = n_gaps - hosts;
        if reserved + rest > free {
            return Err(CnvError::LayoutOverflow(format!(
                "{free} normal probes cannot hold the variance regions and {rest} separators"
            )));
        }
        let share = free - reserved;
        let units = share / self.grid;
        for (i, g) in gaps.iter_mut().skip(hosts).enumerate() {
            *g = (units / rest + usize::from(i < units % rest)) * self.grid;
        }
        gaps[n_gaps - 1] += share % self.grid;
        if hosts > 0 && gaps[hosts..].contains(&0) {
            return Err(CnvError::LayoutOverflow("a normal region would be empty".into()));
        }

        let mut cnv = Vec::with_capacity(designed.len());
        let mut normal = Vec::with_capacity(n_gaps);
        let mut pos = 0;
        for (i, &gap) in gaps.iter().enumerate() {
            normal.push(Bin::new(pos, pos + gap));
            pos += gap;
            if let Some(&(len, ty)) = designed.get(i) {
                cnv.push((Bin::new(pos, pos + len), ty));
                pos += len;
            }
        }
        debug_assert_eq!(pos, self.n_probes);
        Ok(Layout { cnv, normal })
    }
}

/// Probe spans of the designed regions and of the normal stretches between
/// them; zero-length stretches are kept so indices stay aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub cnv: Vec<(Bin, CnvType)>,
    pub normal: Vec<Bin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    Cnv(CnvType),
    VaryVar1,
    VaryVar2,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionKind::Cnv(t) => write!(f, "{t}"),
            RegionKind::VaryVar1 => f.write_str("vary-var1"),
            RegionKind::VaryVar2 => f.write_str("vary-var2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRegion {
    pub id: usize,
    pub span: Bin,
    pub kind: RegionKind,
    /// Table row the carriers follow, e.g. `deletion-3`; `-` for variance regions.
    pub scenario_row: String,
    /// Copy-number state per case sample; empty for variance regions.
    pub case_states: Vec<u8>,
    pub control_states: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub n_probes: usize,
    pub regions: Vec<TruthRegion>,
}

impl GroundTruth {
    /// Designed CNV regions.
    pub fn designed(&self) -> impl Iterator<Item = &TruthRegion> {
        self.regions.iter().filter(|r| matches!(r.kind, RegionKind::Cnv(_)))
    }

    /// `region_id start end cnv_type scenario_row`, 0-based half-open spans.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "region_id\tstart\tend\tcnv_type\tscenario_row")?;
        for r in &self.regions {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.id, r.span.start, r.span.end, r.kind, r.scenario_row
            )?;
        }
        Ok(())
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| CnvError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CnvError::io(path, e))
    }
}

/// Integer counts per state summing to `n`, by largest remainder.
pub fn carrier_counts(fractions: &[f64; K], n: usize) -> [usize; K] {
    let raw = fractions.map(|f| f * n as f64);
    let mut counts = raw.map(|r| r.floor() as usize);
    let short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..K).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    counts
}

fn assign_states(fractions: &[f64; K], n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let counts = carrier_counts(fractions, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut states = vec![0u8; n];
    let mut pos = 0;
    for (k, &c) in counts.iter().enumerate() {
        for &i in &idx[pos..pos + c] {
            states[i] = k as u8;
        }
        pos += c;
    }
    states
}

fn fill(values: &mut [f64], n_probes: usize, sample: usize, span: Bin, d: &Normal<f64>, rng: &mut ChaCha8Rng) {
    let row = &mut values[sample * n_probes..(sample + 1) * n_probes];
    for v in &mut row[span.start..span.end] {
        *v = d.sample(rng);
    }
}

/// Draws one cohort. Identical configs give bit-identical output.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<(IntensityMatrix, IntensityMatrix, GroundTruth)> {
    config.validate()?;
    let layout = config.layout()?;
    let (n1, n2, t) = (config.n_case, config.n_control, config.n_probes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sd).expect("positive sd");
    let mut case: Vec<f64> = (0..n1 * t).map(|_| noise.sample(&mut rng)).collect();
    let mut control: Vec<f64> = (0..n2 * t).map(|_| noise.sample(&mut rng)).collect();

    let (case_mu, case_sd) = match (config.batch_effect, config.shared_row) {
        (true, _) | (false, SharedRow::Case) => (CASE_MU, CASE_SD),
        (false, SharedRow::Control) => (CONTROL_MU, CONTROL_SD),
    };
    let (ctrl_mu, ctrl_sd) = match (config.batch_effect, config.shared_row) {
        (false, SharedRow::Case) => (CASE_MU, CASE_SD),
        _ => (CONTROL_MU, CONTROL_SD),
    };
    let states_dists = |mu: [f64; K], sd: [f64; K]| -> [Normal<f64>; K] {
        std::array::from_fn(|k| Normal::new(mu[k], sd[k]).expect("positive sd"))
    };
    let case_d = states_dists(case_mu, case_sd);
    let ctrl_d = states_dists(ctrl_mu, ctrl_sd);

    let mut regions = Vec::new();
    for &(span, ty) in &layout.cnv {
        let (fc, ft) = proportions(config.frequency, ty);
        let cs = assign_states(&fc, n1, &mut rng);
        let ts = assign_states(&ft, n2, &mut rng);
        for (i, &s) in cs.iter().enumerate() {
            fill(&mut case, t, i, span, &case_d[s as usize], &mut rng);
        }
        for (j, &s) in ts.iter().enumerate() {
            fill(&mut control, t, j, span, &ctrl_d[s as usize], &mut rng);
        }
        regions.push(TruthRegion {
            id: regions.len(),
            span,
            kind: RegionKind::Cnv(ty),
            scenario_row: format!("{ty}-{}", config.frequency.scenario()),
            case_states: cs,
            control_states: ts,
        });
    }

    if config.variance_heterogeneity {
        for (g, &len) in VARY_VAR1_LENGTHS.iter().enumerate() {
            let start = layout.normal[g].start + config.margin;
            let span = Bin::new(start, start + len);
            let dc = Normal::new(0.0, VARY_VAR1_SD.0).unwrap();
            let dt = Normal::new(0.0, VARY_VAR1_SD.1).unwrap();
            (0..n1).for_each(|i| fill(&mut case, t, i, span, &dc, &mut rng));
            (0..n2).for_each(|j| fill(&mut control, t, j, span, &dt, &mut rng));
            regions.push(variance_region(regions.len(), span, RegionKind::VaryVar1));
        }
        let hosts = VARY_VAR1_LENGTHS.len();
        let candidates: Vec<Bin> = layout.normal[hosts..].iter().copied().filter(|b| !b.is_empty()).collect();
        for &span in candidates.iter().take(config.vary_var2_regions) {
            let mut sub = 0;
            let mut start = span.start;
            while start < span.end {
                sub += 1;
                let piece = Bin::new(start, (start + VARY_VAR2_SUBBIN).min(span.end));
                let (sc, st) = VARY_VAR2_SD[sub % 3];
                let dc = Normal::new(0.0, sc).unwrap();
                let dt = Normal::new(0.0, st).unwrap();
                (0..n1).for_each(|i| fill(&mut case, t, i, piece, &dc, &mut rng));
                (0..n2).for_each(|j| fill(&mut control, t, j, piece, &dt, &mut rng));
                start = piece.end;
            }
            regions.push(variance_region(regions.len(), span, RegionKind::VaryVar2));
        }
    }
    regions.sort_by_key(|r| r.span.start);
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i;
    }

    Ok((
        IntensityMatrix::from_flat(Group::Case, n1, t, case)?,
        IntensityMatrix::from_flat(Group::Control, n2, t, control)?,
        GroundTruth { n_probes: t, regions },
    ))
}

fn variance_region(id: usize, span: Bin, kind: RegionKind) -> TruthRegion {
    TruthRegion {
        id,
        span,
        kind,
        scenario_row: "-".into(),
        case_states: Vec::new(),
        control_states: Vec::new(),
    }
}
