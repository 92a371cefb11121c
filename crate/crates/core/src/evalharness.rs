//! Overlap-based matching of predicted vs ground-truth spans, per-type and
//! micro/macro precision/recall/F1, and manual-review tallies.
//!
//! Matching is one-to-one within each coarse type: a pair is admissible iff
//! the types match and the intervals overlap, and pairs are chosen greedily
//! by descending overlap length. Greedy is the documented protocol choice,
//! not claimed optimal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::jsonl::SpanRecord;
use crate::types::{ActionTypeCoarse, TypedSpan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Admit pairs whose intervals only touch at an endpoint. Off by
    /// default: "any temporal overlap" is read as strictly positive
    /// intersection.
    pub allow_touching: bool,
}

#[allow(clippy::derivable_impls)]
impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { allow_touching: false }
    }
}

/// Outcome of matching: index pairs plus the unmatched leftovers. Indices
/// refer to the caller's input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (pred index, gt index) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Greedy one-to-one matching by descending overlap length, ties broken by
/// earlier gt start then earlier pred start.
pub fn match_events(preds: &[TypedSpan], gts: &[TypedSpan]) -> MatchResult {
    match_events_with(preds, gts, &MatchConfig::default())
}

pub fn match_events_with(
    preds: &[TypedSpan],
    gts: &[TypedSpan],
    cfg: &MatchConfig,
) -> MatchResult {
    // Canonical sort first so the result does not depend on input order.
    let mut p_order: Vec<usize> = (0..preds.len()).collect();
    p_order.sort_by(|&a, &b| preds[a].cmp_key(&preds[b]));
    let mut g_order: Vec<usize> = (0..gts.len()).collect();
    g_order.sort_by(|&a, &b| gts[a].cmp_key(&gts[b]));

    struct Candidate {
        overlap: f64,
        gt_start: f64,
        pred_start: f64,
        p_pos: usize,
        g_pos: usize,
    }
    let mut candidates = Vec::new();
    for (p_pos, &pi) in p_order.iter().enumerate() {
        for (g_pos, &gi) in g_order.iter().enumerate() {
            let (p, g) = (&preds[pi], &gts[gi]);
            if p.action != g.action {
                continue;
            }
            let overlap = p.overlap_len(g);
            let touching = p.t_end_s == g.t_start_s || g.t_end_s == p.t_start_s;
            if overlap > 0.0 || (cfg.allow_touching && touching) {
                candidates.push(Candidate {
                    overlap,
                    gt_start: g.t_start_s,
                    pred_start: p.t_start_s,
                    p_pos,
                    g_pos,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.overlap
            .total_cmp(&a.overlap)
            .then(a.gt_start.total_cmp(&b.gt_start))
            .then(a.pred_start.total_cmp(&b.pred_start))
            .then(a.g_pos.cmp(&b.g_pos))
            .then(a.p_pos.cmp(&b.p_pos))
    });

    let mut p_used = vec![false; preds.len()];
    let mut g_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        let (pi, gi) = (p_order[c.p_pos], g_order[c.g_pos]);
        if !p_used[pi] && !g_used[gi] {
            p_used[pi] = true;
            g_used[gi] = true;
            pairs.push((pi, gi));
        }
    }
    pairs.sort_unstable();
    MatchResult {
        pairs,
        false_positives: (0..preds.len()).filter(|&i| !p_used[i]).collect(),
        false_negatives: (0..gts.len()).filter(|&i| !g_used[i]).collect(),
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// `F1 = 2PR / (P + R)`, zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TypePrf {
    pub preds: usize,
    pub gt: usize,
    pub tp: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypePrf {
    fn from_counts(preds: usize, gt: usize, tp: usize) -> TypePrf {
        let precision = if preds == 0 { 0.0 } else { tp as f64 / preds as f64 };
        let recall = if gt == 0 { 0.0 } else { tp as f64 / gt as f64 };
        TypePrf { preds, gt, tp, precision, recall, f1: f1_score(precision, recall) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-type and aggregate metrics. `micro` pools counts over all types;
/// `macro_avg` is the unweighted mean over types observed in either input.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PRFReport {
    pub per_type: BTreeMap<ActionTypeCoarse, TypePrf>,
    pub micro: TypePrf,
    pub macro_avg: MacroPrf,
}

impl PRFReport {
    pub fn from_type_counts(counts: &BTreeMap<ActionTypeCoarse, (usize, usize, usize)>) -> Self {
        let per_type: BTreeMap<ActionTypeCoarse, TypePrf> = counts
            .iter()
            .filter(|(_, &(preds, gt, _))| preds + gt > 0)
            .map(|(&a, &(preds, gt, tp))| (a, TypePrf::from_counts(preds, gt, tp)))
            .collect();
        let (sp, sg, st) = per_type
            .values()
            .fold((0, 0, 0), |(p, g, t), v| (p + v.preds, g + v.gt, t + v.tp));
        let micro = TypePrf::from_counts(sp, sg, st);
        let n = per_type.len().max(1) as f64;
        let macro_avg = MacroPrf {
            precision: per_type.values().map(|v| v.precision).sum::<f64>() / n,
            recall: per_type.values().map(|v| v.recall).sum::<f64>() / n,
            f1: per_type.values().map(|v| v.f1).sum::<f64>() / n,
        };
        PRFReport { per_type, micro, macro_avg }
    }

    /// Two-decimal presentation, numbers rounded only here.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Action | Preds | GT | Precision | Recall | F1 |\n|---|---|---|---|---|---|\n",
        );
        for (action, t) in &self.per_type {
            out.push_str(&format!(
                "| {action} | {} | {} | {:.2} | {:.2} | {:.2} |\n",
                t.preds, t.gt, t.precision, t.recall, t.f1
            ));
        }
        out.push_str(&format!(
            "| micro | {} | {} | {:.2} | {:.2} | {:.2} |\n",
            self.micro.preds, self.micro.gt, self.micro.precision, self.micro.recall, self.micro.f1
        ));
        out.push_str(&format!(
            "| macro | | | {:.2} | {:.2} | {:.2} |\n",
            self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1
        ));
        out
    }
}

/// Matches one pred/gt set and reduces to metrics.
pub fn prf(match_result: &MatchResult, preds: &[TypedSpan], gts: &[TypedSpan]) -> PRFReport {
    let mut counts: BTreeMap<ActionTypeCoarse, (usize, usize, usize)> = BTreeMap::new();
    for p in preds {
        counts.entry(p.action).or_default().0 += 1;
    }
    for g in gts {
        counts.entry(g.action).or_default().1 += 1;
    }
    for &(pi, _) in &match_result.pairs {
        counts.entry(preds[pi].action).or_default().2 += 1;
    }
    PRFReport::from_type_counts(&counts)
}

/// Evaluates two `spans.jsonl` record sets, matching within each
/// `(video_id, clip_id)` group and pooling counts associatively.
pub fn evaluate_records(
    preds: &[SpanRecord],
    gts: &[SpanRecord],
    cfg: &MatchConfig,
) -> PRFReport {
    let mut groups: BTreeMap<(String, Option<String>), (Vec<TypedSpan>, Vec<TypedSpan>)> =
        BTreeMap::new();
    for r in preds {
        groups
            .entry((r.video_id.clone(), r.clip_id.clone()))
            .or_default()
            .0
            .push(r.span);
    }
    for r in gts {
        groups
            .entry((r.video_id.clone(), r.clip_id.clone()))
            .or_default()
            .1
            .push(r.span);
    }
    let mut counts: BTreeMap<ActionTypeCoarse, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in groups.values() {
        let m = match_events_with(p, g, cfg);
        for s in p {
            counts.entry(s.action).or_default().0 += 1;
        }
        for s in g {
            counts.entry(s.action).or_default().1 += 1;
        }
        for &(pi, _) in &m.pairs {
            counts.entry(p[pi].action).or_default().2 += 1;
        }
    }
    PRFReport::from_type_counts(&counts)
}

// ---------------------------------------------------------------------------
// Manual-review tallies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewVerdict {
    Proper,
    Improper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub action: ActionTypeCoarse,
    pub verdict: ReviewVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub samples: usize,
    pub proper: usize,
    pub accuracy: f64,
}

/// Per-type and pooled accuracy over binary review verdicts. Types with no
/// records are absent from the table rather than reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTally {
    pub per_type: BTreeMap<ActionTypeCoarse, TypeAccuracy>,
    pub overall: TypeAccuracy,
}

pub fn tally_reviews(records: &[ReviewRecord]) -> ReviewTally {
    let mut per: BTreeMap<ActionTypeCoarse, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = per.entry(r.action).or_default();
        e.0 += 1;
        if r.verdict == ReviewVerdict::Proper {
            e.1 += 1;
        }
    }
    let acc = |samples: usize, proper: usize| TypeAccuracy {
        samples,
        proper,
        accuracy: if samples == 0 { 0.0 } else { proper as f64 / samples as f64 },
    };
    let total: usize = per.values().map(|v| v.0).sum();
    let proper: usize = per.values().map(|v| v.1).sum();
    ReviewTally {
        per_type: per.into_iter().map(|(a, (s, p))| (a, acc(s, p))).collect(),
        overall: acc(total, proper),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(action: ActionTypeCoarse, s: f64, e: f64) -> TypedSpan {
        TypedSpan::new(action, s, e)
    }

    #[test]
    fn identical_sets_fully_match() {
        let spans = vec![
            span(ActionTypeCoarse::Click, 1.0, 2.0),
            span(ActionTypeCoarse::Type, 3.5, 5.5),
        ];
        let m = match_events(&spans, &spans);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());
    }

    #[test]
    fn type_mismatch_never_pairs() {
        let preds = vec![span(ActionTypeCoarse::Click, 1.0, 2.0)];
        let gts = vec![span(ActionTypeCoarse::Type, 1.0, 2.0)];
        let m = match_events(&preds, &gts);
        assert!(m.pairs.is_empty());
        assert_eq!(m.false_positives, vec![0]);
        assert_eq!(m.false_negatives, vec![0]);
    }

    #[test]
    fn larger_overlap_wins_the_gt() {
        let preds = vec![
            span(ActionTypeCoarse::Click, 0.9, 1.2), // overlap 0.2
            span(ActionTypeCoarse::Click, 1.1, 2.5), // overlap 0.9
        ];
        let gts = vec![span(ActionTypeCoarse::Click, 1.0, 2.0)];
        let m = match_events(&preds, &gts);
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.false_positives, vec![0]);
    }

    #[test]
    fn touching_endpoints_follow_config() {
        let preds = vec![span(ActionTypeCoarse::Click, 1.0, 2.0)];
        let gts = vec![span(ActionTypeCoarse::Click, 2.0, 3.0)];
        assert!(match_events(&preds, &gts).pairs.is_empty());
        let cfg = MatchConfig { allow_touching: true };
        assert_eq!(match_events_with(&preds, &gts, &cfg).pairs, vec![(0, 0)]);
    }

    #[test]
    fn matching_ignores_input_order() {
        let preds = vec![
            span(ActionTypeCoarse::Click, 5.0, 6.0),
            span(ActionTypeCoarse::Click, 1.0, 2.0),
            span(ActionTypeCoarse::Scroll, 3.0, 4.0),
        ];
        let gts = vec![
            span(ActionTypeCoarse::Click, 1.5, 2.5),
            span(ActionTypeCoarse::Scroll, 3.5, 4.5),
            span(ActionTypeCoarse::Click, 5.5, 6.5),
        ];
        let a = match_events(&preds, &gts);
        let mut preds_rev = preds.clone();
        preds_rev.reverse();
        let b = match_events(&preds_rev, &gts);
        let remap = |i: usize| preds.len() - 1 - i;
        let mut b_pairs: Vec<(usize, usize)> =
            b.pairs.iter().map(|&(p, g)| (remap(p), g)).collect();
        b_pairs.sort_unstable();
        assert_eq!(a.pairs, b_pairs);
    }

    #[test]
    fn prf_reproduces_published_f1_rows() {
        // Published (P, R) pairs; F1 recomputed from unrounded P/R.
        for (p, r, f1) in [(0.88, 0.76, 0.82), (0.93, 0.80, 0.86), (0.88, 0.70, 0.78)] {
            assert!((f1_score(p, r) - f1).abs() <= 0.01, "f1({p}, {r})");
        }
        // The press row shows the rounding the tolerance allows for.
        assert!((f1_score(0.40, 0.08) - 0.14).abs() <= 0.01);
    }

    #[test]
    fn prf_counts_pool_into_micro() {
        let preds = vec![
            span(ActionTypeCoarse::Click, 1.0, 2.0),
            span(ActionTypeCoarse::Click, 8.0, 9.0),
            span(ActionTypeCoarse::Scroll, 3.0, 4.0),
        ];
        let gts = vec![
            span(ActionTypeCoarse::Click, 1.5, 2.5),
            span(ActionTypeCoarse::Scroll, 3.5, 4.5),
            span(ActionTypeCoarse::Scroll, 6.0, 7.0),
        ];
        let report = prf(&match_events(&preds, &gts), &preds, &gts);
        let click = report.per_type[&ActionTypeCoarse::Click];
        assert_eq!((click.preds, click.gt, click.tp), (2, 1, 1));
        assert_eq!(report.micro.tp, 2);
        assert_eq!(report.micro.preds, 3);
        assert_eq!(report.micro.gt, 3);
        assert!((report.micro.precision - 2.0 / 3.0).abs() < 1e-12);
        // Macro recomputed independently.
        let scroll = report.per_type[&ActionTypeCoarse::Scroll];
        let expect_macro_f1 = (click.f1 + scroll.f1) / 2.0;
        assert!((report.macro_avg.f1 - expect_macro_f1).abs() < 1e-12);
    }

    #[test]
    fn review_tallies_match_published_rates() {
        let mut records = Vec::new();
        for (action, samples, proper) in [
            (ActionTypeCoarse::Click, 324, 231),
            (ActionTypeCoarse::Drag, 22, 8),
            (ActionTypeCoarse::Press, 47, 17),
            (ActionTypeCoarse::Scroll, 34, 25),
            (ActionTypeCoarse::Type, 73, 48),
        ] {
            for i in 0..samples {
                records.push(ReviewRecord {
                    action,
                    verdict: if i < proper { ReviewVerdict::Proper } else { ReviewVerdict::Improper },
                });
            }
        }
        let tally = tally_reviews(&records);
        let click = tally.per_type[&ActionTypeCoarse::Click];
        assert_eq!(click.samples, 324);
        // 231/324 = 0.7129... which presents as 0.713.
        assert!((click.accuracy - 0.713).abs() < 0.0005);
        assert_eq!(tally.overall.samples, 500);
        assert_eq!(tally.overall.proper, 329);
        assert!((tally.overall.accuracy - 0.658).abs() < 1e-12);
    }

    #[test]
    fn absent_types_are_absent_not_zero() {
        let tally = tally_reviews(&[ReviewRecord {
            action: ActionTypeCoarse::Click,
            verdict: ReviewVerdict::Proper,
        }]);
        assert!(!tally.per_type.contains_key(&ActionTypeCoarse::Drag));
    }

    #[test]
    fn greedy_never_pairs_disjoint_or_cross_type() {
        let preds = vec![
            span(ActionTypeCoarse::Click, 0.0, 1.0),
            span(ActionTypeCoarse::Drag, 2.0, 3.0),
        ];
        let gts = vec![
            span(ActionTypeCoarse::Click, 5.0, 6.0),
            span(ActionTypeCoarse::Drag, 2.5, 3.5),
        ];
        let m = match_events(&preds, &gts);
        for &(pi, gi) in &m.pairs {
            assert_eq!(preds[pi].action, gts[gi].action);
            assert!(preds[pi].overlap_len(&gts[gi]) > 0.0);
        }
        assert_eq!(m.pairs, vec![(1, 1)]);
    }
}
