//! Corpus analytics: action distributions, step-count statistics,
//! resolution buckets, and content-label shares, with an associative
//! map-reduce shape so shards can be merged in any order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::discovery::{classify_content, Classifier, ContentLabel, DiscoveryError};
use crate::types::{MouseButton, ParamPayload, ReActStep, Trajectory, VideoMeta};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Classify(#[from] DiscoveryError),
}

/// The log-level label of an assembled step, reconstructed from its
/// parameters (the snake_case reporting vocabulary).
pub fn fine_label_of(step: &ReActStep) -> &'static str {
    match &step.params.payload {
        ParamPayload::Click { button: MouseButton::Right, .. } => "right_click",
        ParamPayload::Click { button: MouseButton::Middle, .. } => "middle_click",
        ParamPayload::Click { count: 2, .. } => "double_click",
        ParamPayload::Click { count: 3, .. } => "triple_click",
        ParamPayload::Click { .. } => "left_click",
        ParamPayload::Drag { .. } => "drag",
        ParamPayload::Scroll { horizontal: true, .. } => "hscroll",
        ParamPayload::Scroll { .. } => "scroll",
        ParamPayload::Press { keys } if keys.len() > 1 => "hotkey",
        ParamPayload::Press { .. } => "key",
        ParamPayload::Type { .. } => "type",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionShareRow {
    pub label: String,
    pub count: u64,
    /// Raw ratio in [0, 1]; percentages are presentation.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionDistribution {
    /// Rows sorted by descending count, then label.
    pub rows: Vec<ActionShareRow>,
    pub total: u64,
}

/// Share of a published total, as a percentage.
pub fn percentage_share(count: u64, total: u64) -> f64 {
    count as f64 / total as f64 * 100.0
}

/// Builds a distribution from raw counts; shares use the recounted total
/// and sum to one.
pub fn distribution_from_counts(counts: &BTreeMap<String, u64>) -> ActionDistribution {
    let total: u64 = counts.values().sum();
    let mut rows: Vec<ActionShareRow> = counts
        .iter()
        .map(|(label, &count)| ActionShareRow {
            label: label.clone(),
            count,
            share: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.label.cmp(&b.label)));
    ActionDistribution { rows, total }
}

/// Counts fine labels over assembled trajectories.
pub fn action_distribution(trajectories: &[Trajectory]) -> ActionDistribution {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in trajectories {
        for step in &t.steps {
            *counts.entry(fine_label_of(step).to_string()).or_default() += 1;
        }
    }
    distribution_from_counts(&counts)
}

// ---------------------------------------------------------------------------
// Step statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive step-count bounds, bin width 5: [1-5], [6-10], ...
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub trajectories: usize,
    pub total_steps: usize,
    pub mean_steps: f64,
    pub pct_gt_20: f64,
    pub pct_ge_50: f64,
    pub histogram: Vec<HistogramBin>,
}

pub fn step_stats(trajectories: &[Trajectory]) -> Result<StepStats, StatsError> {
    if trajectories.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let n = trajectories.len();
    let counts: Vec<usize> = trajectories.iter().map(|t| t.steps.len()).collect();
    let total_steps: usize = counts.iter().sum();
    let max_bin = counts.iter().map(|&k| k.saturating_sub(1) / 5).max().unwrap_or(0);
    let mut histogram: Vec<HistogramBin> = (0..=max_bin)
        .map(|b| HistogramBin { lo: b * 5 + 1, hi: b * 5 + 5, count: 0 })
        .collect();
    for &k in &counts {
        histogram[k.saturating_sub(1) / 5].count += 1;
    }
    Ok(StepStats {
        trajectories: n,
        total_steps,
        mean_steps: total_steps as f64 / n as f64,
        pct_gt_20: counts.iter().filter(|&&k| k > 20).count() as f64 / n as f64,
        pct_ge_50: counts.iter().filter(|&&k| k >= 50).count() as f64 / n as f64,
        histogram,
    })
}

// ---------------------------------------------------------------------------
// Resolution buckets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResolutionBucket {
    /// 1080p and above (inclusive boundary).
    High,
    /// [720, 1080).
    Standard,
    /// Below 720.
    Low,
}

/// Buckets by the orientation-corrected vertical resolution: the smaller
/// frame dimension, so a vertical 1080x1920 video still reads as 1080p.
pub fn bucket_of(meta: &VideoMeta) -> ResolutionBucket {
    let p = meta.width_px.min(meta.height_px);
    if p >= 1080 {
        ResolutionBucket::High
    } else if p >= 720 {
        ResolutionBucket::Standard
    } else {
        ResolutionBucket::Low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResolutionBuckets {
    pub high: usize,
    pub standard: usize,
    pub low: usize,
}

pub fn resolution_buckets(metas: &[VideoMeta]) -> ResolutionBuckets {
    let mut out = ResolutionBuckets::default();
    for m in metas {
        match bucket_of(m) {
            ResolutionBucket::High => out.high += 1,
            ResolutionBucket::Standard => out.standard += 1,
            ResolutionBucket::Low => out.low += 1,
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Combined corpus report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub actions: ActionDistribution,
    pub steps: StepStats,
    pub resolution: ResolutionBuckets,
    /// Content-label counts and shares over the supplied metadata.
    pub content_labels: Vec<ActionShareRow>,
}

pub fn corpus_report(
    trajectories: &[Trajectory],
    metas: &[VideoMeta],
    classifier: &Classifier<'_>,
) -> Result<CorpusReport, StatsError> {
    let mut label_counts: BTreeMap<String, u64> = BTreeMap::new();
    for m in metas {
        let label: ContentLabel = classify_content(&m.title, &m.description, classifier)?;
        *label_counts.entry(label.name().to_string()).or_default() += 1;
    }
    Ok(CorpusReport {
        actions: action_distribution(trajectories),
        steps: step_stats(trajectories)?,
        resolution: resolution_buckets(metas),
        content_labels: distribution_from_counts(&label_counts).rows,
    })
}

/// One-decimal presentation of the report; raw ratios live in the JSON.
pub fn report_markdown(report: &CorpusReport) -> String {
    let mut out = String::from("# Corpus report\n\n## Actions\n\n| Action | Count | Share |\n|---|---|---|\n");
    for r in &report.actions.rows {
        out.push_str(&format!("| {} | {} | {:.1}% |\n", r.label, r.count, r.share * 100.0));
    }
    out.push_str(&format!("| total | {} | 100.0% |\n", report.actions.total));
    out.push_str(&format!(
        "\n## Steps\n\ntrajectories: {}\nmean steps: {:.2}\n>20 steps: {:.1}%\n>=50 steps: {:.1}%\n",
        report.steps.trajectories,
        report.steps.mean_steps,
        report.steps.pct_gt_20 * 100.0,
        report.steps.pct_ge_50 * 100.0
    ));
    out.push_str("\n| Steps | Trajectories |\n|---|---|\n");
    for b in &report.steps.histogram {
        out.push_str(&format!("| {}-{} | {} |\n", b.lo, b.hi, b.count));
    }
    out.push_str(&format!(
        "\n## Resolution\n\n| Bucket | Count |\n|---|---|\n| High (1080p+) | {} |\n| Standard (720p-1080p) | {} |\n| Low (<720p) | {} |\n",
        report.resolution.high, report.resolution.standard, report.resolution.low
    ));
    out.push_str("\n## Content labels\n\n| Label | Count | Share |\n|---|---|---|\n");
    for r in &report.content_labels {
        out.push_str(&format!("| {} | {} | {:.1}% |\n", r.label, r.count, r.share * 100.0));
    }
    out
}

/// CSV plot data: the step histogram.
pub fn histogram_csv(stats: &StepStats) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in &stats.histogram {
        out.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    out
}

/// CSV plot data: action counts and shares.
pub fn shares_csv(dist: &ActionDistribution) -> String {
    let mut out = String::from("label,count,share\n");
    for r in &dist.rows {
        out.push_str(&format!("{},{},{}\n", r.label, r.count, r.share));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::*;

    fn trajectory_with_steps(video_id: &str, k: usize) -> Trajectory {
        let steps = (0..k)
            .map(|i| {
                let start = i as f64 + 0.5;
                let span = TypedSpan::new(ActionTypeCoarse::Click, start, start + 0.2);
                ReActStep {
                    keyframe: FrameRef {
                        video_id: video_id.into(),
                        timestamp_s: start,
                        path: "f.png".into(),
                    },
                    monologue: Monologue {
                        action_description: "Click.".into(),
                        thought: "I click.".into(),
                    },
                    action: ActionTypeCoarse::Click,
                    params: ActionParams::new(
                        1920,
                        1080,
                        ParamPayload::Click { x_px: 1, y_px: 1, button: MouseButton::Left, count: 1 },
                    ),
                    span,
                }
            })
            .collect();
        Trajectory { video_id: video_id.into(), steps }
    }

    #[test]
    fn published_counts_reproduce_printed_percentages() {
        let total = 1_547_092;
        let round1 = |x: f64| (x * 10.0).round() / 10.0;
        assert_eq!(round1(percentage_share(1_037_617, total)), 67.1);
        assert_eq!(round1(percentage_share(214_816, total)), 13.9);
        assert_eq!(round1(percentage_share(145_860, total)), 9.4);
    }

    #[test]
    fn single_click_corpus_is_all_click() {
        let dist = action_distribution(&[trajectory_with_steps("v", 1)]);
        assert_eq!(dist.total, 1);
        assert_eq!(dist.rows[0].label, "left_click");
        assert_eq!(dist.rows[0].share, 1.0);
    }

    #[test]
    fn shares_match_independent_recount() {
        let trajectories: Vec<Trajectory> =
            (0..7).map(|i| trajectory_with_steps(&format!("v{i}"), 3 + i)).collect();
        let dist = action_distribution(&trajectories);
        // Second pass recount.
        let mut recount: BTreeMap<String, u64> = BTreeMap::new();
        for t in &trajectories {
            for s in &t.steps {
                *recount.entry(fine_label_of(s).to_string()).or_default() += 1;
            }
        }
        let total: u64 = recount.values().sum();
        assert_eq!(dist.total, total);
        let mut share_sum = 0.0;
        for row in &dist.rows {
            assert_eq!(row.count, recount[&row.label]);
            assert_eq!(row.share, row.count as f64 / total as f64);
            share_sum += row.share;
        }
        assert!((share_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fine_labels_cover_param_shapes() {
        let mut t = trajectory_with_steps("v", 5);
        t.steps[1].params.payload =
            ParamPayload::Click { x_px: 1, y_px: 1, button: MouseButton::Left, count: 2 };
        t.steps[2].params.payload = ParamPayload::Press { keys: vec!["ctrl".into(), "c".into()] };
        t.steps[3].params.payload = ParamPayload::Scroll { dx: 3, dy: 0, horizontal: true };
        t.steps[4].params.payload = ParamPayload::Type { text: "x".into() };
        let labels: Vec<&str> = t.steps.iter().map(fine_label_of).collect();
        assert_eq!(labels, vec!["left_click", "double_click", "hotkey", "hscroll", "type"]);
    }

    #[test]
    fn step_stats_fixture_matches_hand_arithmetic() {
        let trajectories: Vec<Trajectory> = [10usize, 30, 60, 57]
            .iter()
            .map(|&k| trajectory_with_steps(&format!("v{k}"), k))
            .collect();
        let s = step_stats(&trajectories).unwrap();
        assert_eq!(s.mean_steps, 39.25);
        assert_eq!(s.pct_gt_20, 0.75);
        assert_eq!(s.pct_ge_50, 0.50);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 4);
        // Bins are [1-5], [6-10], ... so K=10 lands in [6-10].
        let bin = s.histogram.iter().find(|b| b.lo == 6).unwrap();
        assert_eq!(bin.count, 1);
        assert_eq!(s.mean_steps * s.trajectories as f64, s.total_steps as f64);
    }

    #[test]
    fn single_trajectory_mean_is_exact() {
        let s = step_stats(&[trajectory_with_steps("v", 39)]).unwrap();
        assert_eq!(s.mean_steps, 39.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(step_stats(&[]), Err(StatsError::EmptyCorpus)));
    }

    fn meta_res(w: u32, h: u32) -> VideoMeta {
        VideoMeta {
            video_id: format!("v{w}x{h}"),
            title: "How to resize".into(),
            description: String::new(),
            channel_id: "c".into(),
            tags: vec![],
            width_px: w,
            height_px: h,
            published_date: chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            has_captions: true,
            language: "en".into(),
            overlay_fraction: 0.0,
            is_screen_recording: true,
            is_stable: true,
            duration_s: 60.0,
        }
    }

    #[test]
    fn resolution_boundaries_are_inclusive_low() {
        assert_eq!(bucket_of(&meta_res(1920, 1080)), ResolutionBucket::High);
        assert_eq!(bucket_of(&meta_res(1280, 720)), ResolutionBucket::Standard);
        assert_eq!(bucket_of(&meta_res(854, 480)), ResolutionBucket::Low);
        assert_eq!(bucket_of(&meta_res(1280, 1079)), ResolutionBucket::Standard);
        // Orientation corrected: vertical 1080x1920 is still 1080p.
        assert_eq!(bucket_of(&meta_res(1080, 1920)), ResolutionBucket::High);
    }

    #[test]
    fn bucketing_is_total() {
        let metas: Vec<VideoMeta> = (1..40).map(|i| meta_res(i * 64, i * 36)).collect();
        let b = resolution_buckets(&metas);
        assert_eq!(b.high + b.standard + b.low, metas.len());
    }

    #[test]
    fn corpus_report_composes_and_renders() {
        let trajectories = vec![trajectory_with_steps("v1", 3), trajectory_with_steps("v2", 25)];
        let metas = vec![meta_res(1920, 1080), meta_res(640, 480)];
        let report = corpus_report(&trajectories, &metas, &Classifier::Keyword).unwrap();
        assert_eq!(report.content_labels[0].label, "A_tutorial");
        let md = report_markdown(&report);
        assert!(md.contains("left_click"));
        assert!(md.contains("mean steps: 14.00"));
        let csv = histogram_csv(&report.steps);
        assert!(csv.starts_with("bin_lo,bin_hi,count\n"));
    }
}
