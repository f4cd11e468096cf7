use std::collections::BTreeMap;

use super::GroundTruth;
use crate::matrix::Bin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LengthStats {
    pub detected: usize,
    pub total: usize,
}

impl LengthStats {
    pub fn sensitivity(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.detected as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sensitivity: f64,
    pub fdr: f64,
    pub n_designed: usize,
    pub n_designed_found: usize,
    pub n_detected: usize,
    pub n_false: usize,
    /// Keyed by designed region length.
    pub per_length: BTreeMap<usize, LengthStats>,
}

fn overlap(a: Bin, b: Bin) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// Mutual half-overlap: more than half of both spans.
fn matches(detected: Bin, designed: Bin) -> bool {
    let o = 2 * overlap(detected, designed);
    o > detected.len() && o > designed.len()
}

/// Scores detected spans against the designed CNV regions.
///
/// A designed region counts as found when some detected span covers more
/// than half of it and lies more than half inside it. A detected span is a
/// false discovery when less than half of it overlaps every designed region.
pub fn evaluate(detected: &[Bin], truth: &GroundTruth) -> Evaluation {
    let designed: Vec<Bin> = truth.designed().map(|r| r.span).collect();
    let mut per_length: BTreeMap<usize, LengthStats> = BTreeMap::new();
    let mut found = 0;
    for &d in &designed {
        let hit = detected.iter().any(|&x| matches(x, d));
        let e = per_length.entry(d.len()).or_default();
        e.total += 1;
        if hit {
            e.detected += 1;
            found += 1;
        }
    }
    let n_false = detected
        .iter()
        .filter(|&&x| designed.iter().all(|&d| 2 * overlap(x, d) < x.len()))
        .count();
    Evaluation {
        sensitivity: if designed.is_empty() {
            0.0
        } else {
            found as f64 / designed.len() as f64
        },
        fdr: if detected.is_empty() {
            0.0
        } else {
            n_false as f64 / detected.len() as f64
        },
        n_designed: designed.len(),
        n_designed_found: found,
        n_detected: detected.len(),
        n_false,
        per_length,
    }
}

/// Joins runs of adjacent significant spans into single calls. `spans` must
/// be sorted and disjoint.
pub fn detected_regions(spans: &[(Bin, bool)]) -> Vec<Bin> {
    let mut out: Vec<Bin> = Vec::new();
    let mut open: Option<Bin> = None;
    for &(span, significant) in spans {
        match (significant, open) {
            (true, Some(o)) if o.end == span.start => open = Some(Bin::new(o.start, span.end)),
            (true, Some(o)) => {
                out.push(o);
                open = Some(span);
            }
            (true, None) => open = Some(span),
            (false, Some(o)) => {
                out.push(o);
                open = None;
            }
            (false, None) => {}
        }
    }
    out.extend(open);
    out
}

#[cfg(test)]
mod tests {
    use super::super::{CnvType, RegionKind, TruthRegion};
    use super::*;

    fn truth(spans: &[(usize, usize)]) -> GroundTruth {
        GroundTruth {
            n_probes: 1000,
            regions: spans
                .iter()
                .enumerate()
                .map(|(id, &(s, e))| TruthRegion {
                    id,
                    span: Bin::new(s, e),
                    kind: RegionKind::Cnv(CnvType::Deletion),
                    scenario_row: "deletion-1".into(),
                    case_states: vec![],
                    control_states: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn exact_detection() {
        let t = truth(&[(10, 60), (100, 110)]);
        let e = evaluate(&[Bin::new(10, 60), Bin::new(100, 110)], &t);
        assert_eq!((e.sensitivity, e.fdr), (1.0, 0.0));
        assert_eq!(e.per_length[&50], LengthStats { detected: 1, total: 1 });
    }

    #[test]
    fn forty_percent_cover_fails_both_ways() {
        let t = truth(&[(0, 100)]);
        let e = evaluate(&[Bin::new(60, 160)], &t);
        assert_eq!(e.sensitivity, 0.0);
        assert_eq!(e.fdr, 1.0);
    }

    #[test]
    fn nothing_detected() {
        let e = evaluate(&[], &truth(&[(0, 100)]));
        assert_eq!((e.sensitivity, e.fdr), (0.0, 0.0));
    }

    #[test]
    fn partial_inside_is_neither() {
        // Fully inside a long region but covering only 20% of it.
        let e = evaluate(&[Bin::new(0, 20)], &truth(&[(0, 100)]));
        assert_eq!(e.sensitivity, 0.0);
        assert_eq!(e.n_false, 0);
    }

    #[test]
    fn runs_are_joined() {
        let spans = [
            (Bin::new(0, 10), false),
            (Bin::new(10, 20), true),
            (Bin::new(20, 40), true),
            (Bin::new(40, 50), false),
            (Bin::new(50, 60), true),
        ];
        assert_eq!(detected_regions(&spans), vec![Bin::new(10, 40), Bin::new(50, 60)]);
    }
}
