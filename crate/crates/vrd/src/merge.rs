//! Greedy left-to-right association of per-segment relation instances into
//! video-level relation instances.

use serde::{Deserialize, Serialize};

use crate::geometry::{viou_over_overlap, BoxedTrack};
use crate::model::RelationInstance;

/// Video-scope relation instance produced by merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRelationInstance {
    pub subject: BoxedTrack,
    pub object: BoxedTrack,
    pub triplet: (String, String, String),
    pub score: f64,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Overlap-span vIoU required on both subject and object tracks.
    pub viou_threshold: f64,
    /// A video-level instance not extended for this many frames past its end
    /// is frozen and no longer considered.
    pub freeze_after: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            viou_threshold: 0.5,
            freeze_after: 16,
        }
    }
}

struct OpenInstance {
    inst: VideoRelationInstance,
    /// Total frames contributed by constituents, the weight of the running
    /// score mean.
    weight: f64,
}

/// Averages boxes where the spans overlap, concatenates elsewhere. Both
/// tracks must overlap or touch.
fn merge_tracks(a: &BoxedTrack, b: &BoxedTrack) -> BoxedTrack {
    let (ab, ae) = a.span();
    let (bb, be) = b.span();
    let begin = ab.min(bb);
    let end = ae.max(be);
    let mut boxes = Vec::with_capacity(end - begin);
    let mut scores = Vec::with_capacity(end - begin);
    let mut interp = Vec::with_capacity(end - begin);
    for f in begin..end {
        match (a.box_at(f), b.box_at(f)) {
            (Some(x), Some(y)) => {
                boxes.push(crate::geometry::interpolate_box(x, y, 0.5));
                let ia = a.interpolated[f - ab];
                let ib = b.interpolated[f - bb];
                scores.push((a.node_scores[f - ab] + b.node_scores[f - bb]) / 2.0);
                interp.push(ia && ib);
            }
            (Some(x), None) => {
                boxes.push(*x);
                scores.push(a.node_scores[f - ab]);
                interp.push(a.interpolated[f - ab]);
            }
            (None, Some(y)) => {
                boxes.push(*y);
                scores.push(b.node_scores[f - bb]);
                interp.push(b.interpolated[f - bb]);
            }
            (None, None) => unreachable!("merged tracks must be contiguous"),
        }
    }
    BoxedTrack::new(a.category.clone(), begin, boxes, scores, interp)
}

/// Merges segment instances (grouped by segment, segments ordered by begin)
/// into video-level instances. An incoming instance joins an open instance
/// iff the triplets match and both tracks overlap with vIoU at or above the
/// threshold; among candidates the highest subject+object vIoU wins. Scores
/// combine as a duration-weighted mean.
pub fn merge_greedy(instances: &[RelationInstance], cfg: &MergeConfig) -> Vec<VideoRelationInstance> {
    let mut open: Vec<OpenInstance> = Vec::new();
    let mut frozen: Vec<VideoRelationInstance> = Vec::new();

    for inst in instances {
        // retire instances too far behind the current segment
        let cutoff = inst.segment.begin;
        let mut i = 0;
        while i < open.len() {
            if open[i].inst.span.1 + cfg.freeze_after < cutoff {
                frozen.push(open.swap_remove(i).inst);
            } else {
                i += 1;
            }
        }

        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in open.iter().enumerate() {
            if cand.inst.triplet != inst.triplet {
                continue;
            }
            let sv = viou_over_overlap(&cand.inst.subject, &inst.subject);
            let ov = viou_over_overlap(&cand.inst.object, &inst.object);
            if sv < cfg.viou_threshold || ov < cfg.viou_threshold {
                continue;
            }
            let total = sv + ov;
            if best.map(|(_, b)| total > b).unwrap_or(true) {
                best = Some((i, total));
            }
        }
        match best {
            Some((i, _)) => {
                let cand = &mut open[i];
                cand.inst.subject = merge_tracks(&cand.inst.subject, &inst.subject);
                cand.inst.object = merge_tracks(&cand.inst.object, &inst.object);
                let w = (inst.span.1 - inst.span.0) as f64;
                cand.inst.score =
                    (cand.inst.score * cand.weight + inst.score * w) / (cand.weight + w);
                cand.weight += w;
                cand.inst.span = (
                    cand.inst.span.0.min(inst.span.0),
                    cand.inst.span.1.max(inst.span.1),
                );
            }
            None => open.push(OpenInstance {
                inst: VideoRelationInstance {
                    subject: inst.subject.clone(),
                    object: inst.object.clone(),
                    triplet: inst.triplet.clone(),
                    score: inst.score,
                    span: inst.span,
                },
                weight: (inst.span.1 - inst.span.0) as f64,
            }),
        }
    }
    frozen.extend(open.into_iter().map(|o| o.inst));
    frozen.sort_by(|a, b| {
        a.span
            .0
            .cmp(&b.span.0)
            .then(b.score.total_cmp(&a.score))
            .then(a.triplet.cmp(&b.triplet))
    });
    frozen
}
