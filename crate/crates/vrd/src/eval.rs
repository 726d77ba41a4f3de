//! Challenge metric suite: relation detection mAP, Recall@K, relation
//! tagging Precision@K, and trajectory-level detection mAP.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{viou, BoxedTrack};
use crate::merge::VideoRelationInstance;

/// Metric values plus per-video breakdown and match diagnostics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub per_video: BTreeMap<String, BTreeMap<String, f64>>,
    pub matched_predictions: usize,
    pub unmatched_predictions: usize,
    pub gt_count: usize,
    pub videos_without_gt: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub viou_threshold: f64,
    pub recall_ks: Vec<usize>,
    pub tagging_ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            viou_threshold: 0.5,
            recall_ks: vec![50, 100],
            tagging_ks: vec![1, 5, 10],
        }
    }
}

/// True iff the triplets match and both subject and object tracks overlap
/// with vIoU at or above the threshold.
pub fn match_instance(
    pred: &VideoRelationInstance,
    gt: &VideoRelationInstance,
    thr: f64,
) -> bool {
    pred.triplet == gt.triplet
        && viou(&pred.subject, &gt.subject) >= thr
        && viou(&pred.object, &gt.object) >= thr
}

/// Greedy score-ordered matching for one video: each prediction takes the
/// first still-unmatched GT it matches. Returns, per prediction (in rank
/// order), whether it hit.
fn greedy_match(
    preds: &[&VideoRelationInstance],
    gts: &[VideoRelationInstance],
    thr: f64,
) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(preds.len());
    for p in preds {
        let mut hit = false;
        for (gi, gt) in gts.iter().enumerate() {
            if !taken[gi] && match_instance(p, gt, thr) {
                taken[gi] = true;
                hit = true;
                break;
            }
        }
        hits.push(hit);
    }
    hits
}

fn rank_order(preds: &[VideoRelationInstance]) -> Vec<&VideoRelationInstance> {
    let mut refs: Vec<&VideoRelationInstance> = preds.iter().collect();
    refs.sort_by(|a, b| b.score.total_cmp(&a.score));
    refs
}

/// AP with the raw precision-at-each-hit convention:
/// sum of precision at every hit rank, divided by the GT count.
fn average_precision(hits: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    sum / gt_count as f64
}

/// Per-video AP of relation detection, averaged over videos that have GT.
pub fn relation_detection_map(
    preds: &BTreeMap<String, Vec<VideoRelationInstance>>,
    gts: &BTreeMap<String, Vec<VideoRelationInstance>>,
    thr: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (video, gt) in gts {
        if gt.is_empty() {
            continue;
        }
        let empty = Vec::new();
        let pred = preds.get(video).unwrap_or(&empty);
        let ranked = rank_order(pred);
        let hits = greedy_match(&ranked, gt, thr);
        sum += average_precision(&hits, gt.len());
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean over videos of the fraction of GT matched within the top-k scored
/// predictions.
pub fn recall_at_k(
    preds: &BTreeMap<String, Vec<VideoRelationInstance>>,
    gts: &BTreeMap<String, Vec<VideoRelationInstance>>,
    k: usize,
    thr: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (video, gt) in gts {
        if gt.is_empty() {
            continue;
        }
        let empty = Vec::new();
        let pred = preds.get(video).unwrap_or(&empty);
        let ranked: Vec<&VideoRelationInstance> =
            rank_order(pred).into_iter().take(k).collect();
        let hits = greedy_match(&ranked, gt, thr);
        let matched = hits.iter().filter(|&&h| h).count();
        sum += matched as f64 / gt.len() as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn triplet_tags(insts: &[VideoRelationInstance]) -> Vec<(String, String, String)> {
    // deduplicate keeping max score, then rank by score
    let mut best: BTreeMap<&(String, String, String), f64> = BTreeMap::new();
    for i in insts {
        let e = best.entry(&i.triplet).or_insert(f64::NEG_INFINITY);
        if i.score > *e {
            *e = i.score;
        }
    }
    let mut tags: Vec<(&(String, String, String), f64)> = best.into_iter().collect();
    tags.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    tags.into_iter().map(|(t, _)| t.clone()).collect()
}

/// Ungrounded tagging precision: top-k deduplicated predicted triplet tags
/// against the video's GT tag set; denominator min(k, tags emitted).
pub fn tagging_precision_at_k(
    preds: &BTreeMap<String, Vec<VideoRelationInstance>>,
    gts: &BTreeMap<String, Vec<VideoRelationInstance>>,
    k: usize,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (video, gt) in gts {
        if gt.is_empty() {
            continue;
        }
        let gt_tags: BTreeSet<&(String, String, String)> =
            gt.iter().map(|g| &g.triplet).collect();
        let empty = Vec::new();
        let pred = preds.get(video).unwrap_or(&empty);
        let tags = triplet_tags(pred);
        let top: Vec<_> = tags.iter().take(k).collect();
        if top.is_empty() {
            n += 1;
            continue;
        }
        let correct = top.iter().filter(|t| gt_tags.contains(*t)).count();
        sum += correct as f64 / top.len().min(k) as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scored trajectory for the video-object-detection metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredTrack {
    pub video: String,
    pub track: BoxedTrack,
    pub score: f64,
}

/// Category-wise AP of trajectory detection: predictions pooled over videos,
/// ranked by score, greedily matched (within their video) at the vIoU
/// threshold; mAP over categories present in GT.
pub fn trajectory_map(preds: &[ScoredTrack], gts: &[ScoredTrack], thr: f64) -> f64 {
    let mut categories: BTreeSet<&str> = BTreeSet::new();
    for g in gts {
        categories.insert(&g.track.category);
    }
    if categories.is_empty() {
        return 0.0;
    }
    let mut map_sum = 0.0;
    for cat in &categories {
        let cat_gts: Vec<(usize, &ScoredTrack)> = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.track.category == *cat)
            .collect();
        let mut cat_preds: Vec<&ScoredTrack> = preds
            .iter()
            .filter(|p| p.track.category == *cat)
            .collect();
        cat_preds.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut taken = vec![false; cat_gts.len()];
        let mut hits = Vec::with_capacity(cat_preds.len());
        for p in &cat_preds {
            let mut hit = false;
            for (slot, (_, g)) in cat_gts.iter().enumerate() {
                if taken[slot] || g.video != p.video {
                    continue;
                }
                if viou(&p.track, &g.track) >= thr {
                    taken[slot] = true;
                    hit = true;
                    break;
                }
            }
            hits.push(hit);
        }
        map_sum += average_precision(&hits, cat_gts.len());
    }
    map_sum / categories.len() as f64
}

/// Runs the whole suite and assembles the report.
pub fn evaluate(
    preds: &BTreeMap<String, Vec<VideoRelationInstance>>,
    gts: &BTreeMap<String, Vec<VideoRelationInstance>>,
    cfg: &EvalConfig,
) -> EvalReport {
    let mut report = EvalReport::default();
    let thr = cfg.viou_threshold;
    report
        .metrics
        .insert("mAP".into(), relation_detection_map(preds, gts, thr));
    for &k in &cfg.recall_ks {
        report
            .metrics
            .insert(format!("R@{k}"), recall_at_k(preds, gts, k, thr));
    }
    for &k in &cfg.tagging_ks {
        report
            .metrics
            .insert(format!("P@{k}"), tagging_precision_at_k(preds, gts, k));
    }
    for (video, gt) in gts {
        if gt.is_empty() {
            report.videos_without_gt += 1;
            continue;
        }
        report.gt_count += gt.len();
        let empty = Vec::new();
        let pred = preds.get(video).unwrap_or(&empty);
        let ranked = rank_order(pred);
        let hits = greedy_match(&ranked, gt, thr);
        let matched = hits.iter().filter(|&&h| h).count();
        report.matched_predictions += matched;
        report.unmatched_predictions += hits.len() - matched;
        let mut video_metrics = BTreeMap::new();
        video_metrics.insert("AP".to_string(), average_precision(&hits, gt.len()));
        video_metrics.insert("matched".to_string(), matched as f64);
        video_metrics.insert("gt".to_string(), gt.len() as f64);
        report.per_video.insert(video.clone(), video_metrics);
    }
    report
}
