//! End-to-end wiring: whole-video tracking, per-segment relation
//! prediction, training-set assembly from ground truth, and greedy merging.

use crate::error::Result;
use crate::eval::ScoredTrack;
use crate::features::{self, CategoryEmbeddingTable, VisualFeatureStore};
use crate::formats::{DetectionFile, GroundTruthFile, PipelineConfig};
use crate::geometry::BoxedTrack;
use crate::graph::track_detections;
use crate::merge::{merge_greedy, VideoRelationInstance};
use crate::model::{predict_pair, LabelPair, ModelParams, RelationInstance, TrainSample};
use crate::segment::{enumerate_pairs, split_segments, track_segment, Segment};

/// Whole-video trajectory extraction (the `track` stage).
pub fn track_video(det: &DetectionFile, cfg: &PipelineConfig) -> Vec<BoxedTrack> {
    let frames = det.to_frame_lists();
    track_detections(&frames, &cfg.link)
}

pub fn tracks_to_scored(video: &str, tracks: &[BoxedTrack]) -> Vec<ScoredTrack> {
    tracks
        .iter()
        .map(|t| ScoredTrack {
            video: video.to_string(),
            track: t.clone(),
            score: t.confidence,
        })
        .collect()
}

/// Full relation pipeline for one video: segment, track, featurize, predict,
/// merge. Deterministic for fixed inputs.
pub fn run_pipeline(
    det: &DetectionFile,
    params: &ModelParams,
    table: &CategoryEmbeddingTable,
    store: Option<&VisualFeatureStore>,
    cfg: &PipelineConfig,
) -> Result<Vec<VideoRelationInstance>> {
    let frames = det.to_frame_lists();
    let segments = split_segments(frames.len(), &cfg.segment);
    let mut instances: Vec<RelationInstance> = Vec::new();
    for seg in segments {
        let tracks = track_segment(&frames, seg, &cfg.link);
        let pairs = enumerate_pairs(&tracks, seg, &cfg.segment);
        for pair in pairs {
            let sub = &tracks[pair.subject];
            let obj = &tracks[pair.object];
            let feat = features::assemble(
                &det.video, sub, obj, seg, det.width, det.height, table, store,
            )
            .map_err(|e| e.context(format!("video '{}' segment [{}, {})", det.video, seg.begin, seg.end)))?;
            instances.extend(predict_pair(params, sub, obj, seg, &feat, &cfg.predict));
        }
    }
    Ok(merge_greedy(&instances, &cfg.merge))
}

fn label_for(
    gt: &GroundTruthFile,
    sub_id: &str,
    obj_id: &str,
    middle_frame: usize,
    vocab: &[String],
    family: &[&str],
) -> usize {
    for r in &gt.relations {
        if r.subject == sub_id
            && r.object == obj_id
            && r.begin <= middle_frame
            && middle_frame < r.end
            && family.contains(&r.predicate.as_str())
        {
            if let Some(pos) = vocab.iter().position(|p| p == &r.predicate) {
                return pos + 1;
            }
        }
    }
    0
}

/// Builds labeled training samples from ground-truth trajectories: one
/// sample per qualifying ordered pair per segment, labeled by the relation
/// active at the segment's middle frame. Pairs with both labels none are
/// negatives, capped at `negative_ratio` per positive.
pub fn build_training_set(
    gt: &GroundTruthFile,
    table: &CategoryEmbeddingTable,
    store: Option<&VisualFeatureStore>,
    cfg: &PipelineConfig,
) -> Result<Vec<TrainSample>> {
    let spatial_vocab = &cfg.model.spatial_classes;
    let action_vocab = &cfg.model.action_classes;
    let spatial_family: Vec<&str> = crate::synth::SPATIAL_PREDICATES.to_vec();
    let action_family: Vec<&str> = crate::synth::ACTION_PREDICATES.to_vec();

    let tracks: Vec<(String, BoxedTrack)> = gt
        .trajectories
        .iter()
        .map(|t| (t.id.clone(), t.to_track()))
        .collect();

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for seg in split_segments(gt.frame_count, &cfg.segment) {
        let clipped: Vec<(String, BoxedTrack)> = tracks
            .iter()
            .filter_map(|(id, t)| t.clip(seg.begin, seg.end).map(|c| (id.clone(), c)))
            .collect();
        let track_refs: Vec<BoxedTrack> = clipped.iter().map(|(_, t)| t.clone()).collect();
        for pair in enumerate_pairs(&track_refs, seg, &cfg.segment) {
            let (sub_id, sub) = &clipped[pair.subject];
            let (obj_id, obj) = &clipped[pair.object];
            let mid = seg.middle_frame();
            let label = LabelPair {
                spatial: label_for(gt, sub_id, obj_id, mid, spatial_vocab, &spatial_family),
                action: label_for(gt, sub_id, obj_id, mid, action_vocab, &action_family),
            };
            let feat = features::assemble(
                &gt.video, sub, obj, seg, gt.width, gt.height, table, store,
            )?;
            let sample = TrainSample {
                feature: feat.into(),
                label,
            };
            if label.spatial == 0 && label.action == 0 {
                negatives.push(sample);
            } else {
                positives.push(sample);
            }
        }
    }
    let cap = ((positives.len() as f64) * cfg.negative_ratio).ceil() as usize;
    negatives.truncate(cap.max(if positives.is_empty() { negatives.len() } else { 0 }));
    positives.extend(negatives);
    Ok(positives)
}

/// Categories appearing anywhere in a ground-truth file.
pub fn gt_categories(gts: &[GroundTruthFile]) -> Vec<String> {
    let mut set = std::collections::BTreeSet::new();
    for gt in gts {
        for t in &gt.trajectories {
            set.insert(t.category.clone());
        }
    }
    set.into_iter().collect()
}

/// Segment span helper used by the CLI to report coverage.
pub fn segment_spans(frame_count: usize, cfg: &PipelineConfig) -> Vec<Segment> {
    split_segments(frame_count, &cfg.segment)
}
