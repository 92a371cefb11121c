//! Independent oracles shared by the integration suites. These deliberately
//! re-derive results from the documented rules rather than reusing the
//! implementation's code paths.

use std::collections::BTreeSet;

use trajmine::discovery::{
    channel_sample_seed, quality_check, sample_indices, Catalog, CatalogFixture,
    DiscoveryConfig, SyntheticCatalog,
};
use trajmine::evalharness::MatchConfig;
use trajmine::screenfilter::GateConfig;
use trajmine::types::TypedSpan;

/// Brute-force cursor gate: enumerate candidate segments per starting run,
/// keep the maximal ones, and apply the duration and presence-ratio rules
/// directly.
pub fn gate_oracle(present: &[bool], fps: f64, cfg: &GateConfig) -> Vec<(f64, f64)> {
    // Maximal runs of present frames.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < present.len() {
        if present[i] {
            let a = i;
            while i < present.len() && present[i] {
                i += 1;
            }
            runs.push((a, i - 1));
        } else {
            i += 1;
        }
    }
    let gap_ok = |left: usize, right: usize| {
        // Gap between run `left` and run `right = left + 1`, in seconds.
        (runs[right].0 - runs[left].1 - 1) as f64 / fps <= cfg.merge_gap_s
    };

    let mut out = Vec::new();
    for start in 0..runs.len() {
        // Candidate segment starting here is maximal only if it cannot
        // extend left.
        if start > 0 && gap_ok(start - 1, start) {
            continue;
        }
        // Extend right as far as the merge rule allows.
        let mut end = start;
        while end + 1 < runs.len() && gap_ok(end, end + 1) {
            end += 1;
        }
        let (a, b) = (runs[start].0, runs[end].1);
        let frames = b - a + 1;
        let duration = frames as f64 / fps;
        let present_count = present[a..=b].iter().filter(|p| **p).count();
        if duration >= cfg.min_duration_s
            && present_count as f64 / frames as f64 >= cfg.presence_ratio
        {
            out.push((a as f64 / fps, (b + 1) as f64 / fps));
        }
    }
    out
}

/// Maximum bipartite matching size over the admissible (type + overlap)
/// pairs, via augmenting paths.
pub fn max_matching_pairs(preds: &[TypedSpan], gts: &[TypedSpan], cfg: &MatchConfig) -> usize {
    let admissible = |p: &TypedSpan, g: &TypedSpan| {
        p.action == g.action
            && (p.overlap_len(g) > 0.0
                || (cfg.allow_touching && (p.t_end_s == g.t_start_s || g.t_end_s == p.t_start_s)))
    };
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .enumerate()
                .filter(|(_, g)| admissible(p, g))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut matched_gt: Vec<Option<usize>> = vec![None; gts.len()];

    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        matched_gt: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if matched_gt[v].is_none()
                    || augment(matched_gt[v].unwrap(), adj, matched_gt, seen)
                {
                    matched_gt[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }

    let mut size = 0;
    for u in 0..preds.len() {
        let mut seen = vec![false; gts.len()];
        if augment(u, &adj, &mut matched_gt, &mut seen) {
            size += 1;
        }
    }
    size
}

/// Scripted re-simulation of the discovery policy, straight from its
/// documented rules. Returns (candidates, accepted channels, rejected
/// channels).
pub fn discovery_reference_sim(
    fixture: &CatalogFixture,
    seeds: &[String],
    cfg: &DiscoveryConfig,
) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
    let catalog = SyntheticCatalog::new(fixture.clone());
    let mut candidates: BTreeSet<String> = BTreeSet::new();
    let mut accepted: BTreeSet<String> = BTreeSet::new();
    let mut rejected: BTreeSet<String> = BTreeSet::new();
    let mut used_keywords: BTreeSet<String> = BTreeSet::new();
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut frontier: BTreeSet<String> = seeds.iter().map(|s| s.to_lowercase()).collect();
    let mut carried_related: BTreeSet<String> = BTreeSet::new();

    for round in 0..cfg.max_rounds {
        if frontier.is_empty() && carried_related.is_empty() {
            break;
        }
        used_keywords.extend(frontier.iter().cloned());

        let mut hits: BTreeSet<String> = carried_related.clone();
        for kw in &frontier {
            hits.extend(catalog.search(kw).unwrap());
        }
        carried_related.clear();

        let mut nominated: BTreeSet<String> = BTreeSet::new();
        for vid in &hits {
            visited.insert(vid.clone());
            let meta = catalog.meta(vid).unwrap();
            if quality_check(&meta, cfg.reference_date).pass {
                nominated.insert(meta.channel_id);
            }
        }

        let mut tags: BTreeSet<String> = BTreeSet::new();
        let mut related: BTreeSet<String> = BTreeSet::new();
        for channel in nominated {
            if accepted.contains(&channel) || rejected.contains(&channel) {
                continue;
            }
            let vids = catalog.channel_videos(&channel).unwrap();
            if vids.is_empty() {
                rejected.insert(channel);
                continue;
            }
            let idx = sample_indices(
                channel_sample_seed(cfg.seed, round, &channel),
                vids.len(),
                cfg.sample_n,
            );
            let passing: Vec<&String> = idx
                .iter()
                .map(|&i| &vids[i])
                .filter(|v| quality_check(&catalog.meta(v).unwrap(), cfg.reference_date).pass)
                .collect();
            if passing.len() as f64 / idx.len() as f64 >= cfg.pass_threshold {
                accepted.insert(channel);
                candidates.extend(vids.iter().cloned());
                for v in passing {
                    let meta = catalog.meta(v).unwrap();
                    tags.extend(meta.tags.iter().map(|t| t.to_lowercase()));
                    related.extend(catalog.related(v).unwrap());
                }
            } else {
                rejected.insert(channel);
            }
        }

        frontier = tags.difference(&used_keywords).cloned().collect();
        carried_related = related
            .into_iter()
            .filter(|v| !visited.contains(v))
            .take(cfg.related_cap_per_round)
            .collect();
    }
    (candidates, accepted, rejected)
}
