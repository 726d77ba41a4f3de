//! JSON interchange formats: per-frame detections, ground truth, relation
//! predictions, and the pipeline configuration. All parsers validate before
//! handing data to the pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VrdError};
use crate::eval::{EvalConfig, ScoredTrack};
use crate::geometry::{BBox, BoxedTrack, Detection};
use crate::graph::LinkConfig;
use crate::merge::{MergeConfig, VideoRelationInstance};
use crate::model::{ModelConfig, PredictConfig, TrainConfig};
use crate::segment::SegmentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub category: String,
    pub score: f64,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub detections: Vec<DetectionRecord>,
}

/// Per-frame detector output for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub video: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub frame_count: Option<usize>,
    pub frames: Vec<FrameDetections>,
}

impl DetectionFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: DetectionFile = serde_json::from_str(text)
            .map_err(|e| VrdError::Invalid(format!("detection file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VrdError::io(path, e))?;
        DetectionFile::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(VrdError::Invalid(format!(
                "video '{}': frame size {}x{} invalid",
                self.video, self.width, self.height
            )));
        }
        let mut prev: Option<usize> = None;
        for f in &self.frames {
            if let Some(p) = prev {
                if f.frame_index <= p {
                    return Err(VrdError::Invalid(format!(
                        "video '{}': frame_index {} not strictly increasing after {p}",
                        self.video, f.frame_index
                    )));
                }
            }
            prev = Some(f.frame_index);
            for d in &f.detections {
                if !(d.score > 0.0 && d.score <= 1.0) || !d.score.is_finite() {
                    return Err(VrdError::Invalid(format!(
                        "video '{}' frame {}: score {} outside (0,1]",
                        self.video, f.frame_index, d.score
                    )));
                }
                let [x, y, w, h] = d.bbox;
                if !(w > 0.0 && h > 0.0) || [x, y, w, h].iter().any(|v| !v.is_finite()) {
                    return Err(VrdError::Invalid(format!(
                        "video '{}' frame {}: degenerate box {:?}",
                        self.video, f.frame_index, d.bbox
                    )));
                }
            }
        }
        if let Some(fc) = self.frame_count {
            if let Some(last) = self.frames.last() {
                if last.frame_index >= fc {
                    return Err(VrdError::Invalid(format!(
                        "video '{}': frame_index {} beyond frame_count {fc}",
                        self.video, last.frame_index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
            .unwrap_or_else(|| self.frames.last().map(|f| f.frame_index + 1).unwrap_or(0))
    }

    /// Dense per-frame detection lists with boxes clamped to frame bounds.
    pub fn to_frame_lists(&self) -> Vec<Vec<Detection>> {
        let t = self.frame_count();
        let mut out = vec![Vec::new(); t];
        for f in &self.frames {
            if f.frame_index >= t {
                continue;
            }
            for d in &f.detections {
                let [x, y, w, h] = d.bbox;
                let x0 = x.clamp(0.0, self.width - 1.0);
                let y0 = y.clamp(0.0, self.height - 1.0);
                let x1 = (x + w).clamp(x0 + 1e-3, self.width);
                let y1 = (y + h).clamp(y0 + 1e-3, self.height);
                out[f.frame_index].push(Detection::new(
                    f.frame_index,
                    d.category.clone(),
                    d.score,
                    BBox::new(x0, y0, x1 - x0, y1 - y0),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTrack {
    pub id: String,
    pub category: String,
    pub start_frame: usize,
    pub boxes: Vec<[f64; 4]>,
}

impl GtTrack {
    pub fn to_track(&self) -> BoxedTrack {
        BoxedTrack::from_boxes(
            self.category.clone(),
            self.start_frame,
            self.boxes
                .iter()
                .map(|&[x, y, w, h]| BBox::new(x, y, w, h))
                .collect(),
            1.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRelation {
    pub subject: String,
    pub object: String,
    pub predicate: String,
    /// Half-open frame span where the predicate holds.
    pub begin: usize,
    pub end: usize,
}

/// Explicitly unrelated pair over a span; training negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativePair {
    pub subject: String,
    pub object: String,
    pub begin: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub video: String,
    pub width: f64,
    pub height: f64,
    pub frame_count: usize,
    pub trajectories: Vec<GtTrack>,
    pub relations: Vec<GtRelation>,
    #[serde(default)]
    pub negative_pairs: Vec<NegativePair>,
}

impl GroundTruthFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: GroundTruthFile = serde_json::from_str(text)
            .map_err(|e| VrdError::Invalid(format!("ground truth file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VrdError::io(path, e))?;
        GroundTruthFile::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.trajectories {
            if t.boxes.is_empty() {
                return Err(VrdError::Invalid(format!(
                    "video '{}': trajectory '{}' has no boxes",
                    self.video, t.id
                )));
            }
            if !ids.insert(&t.id) {
                return Err(VrdError::Invalid(format!(
                    "video '{}': duplicate trajectory id '{}'",
                    self.video, t.id
                )));
            }
            for &[_, _, w, h] in &t.boxes {
                if !(w > 0.0 && h > 0.0) {
                    return Err(VrdError::Invalid(format!(
                        "video '{}': trajectory '{}' has a degenerate box",
                        self.video, t.id
                    )));
                }
            }
        }
        for r in &self.relations {
            if r.begin >= r.end {
                return Err(VrdError::Invalid(format!(
                    "video '{}': relation span [{}, {}) empty",
                    self.video, r.begin, r.end
                )));
            }
            for tid in [&r.subject, &r.object] {
                if !ids.contains(tid) {
                    return Err(VrdError::Invalid(format!(
                        "video '{}': relation references unknown trajectory '{tid}'",
                        self.video
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn track_by_id(&self, id: &str) -> Option<&GtTrack> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    /// Relations as grounded video-level instances (score 1, tracks clipped
    /// to the relation span), keyed for the evaluation module.
    pub fn to_relation_instances(&self) -> Vec<VideoRelationInstance> {
        let mut out = Vec::new();
        for r in &self.relations {
            let sub = self.track_by_id(&r.subject).expect("validated").to_track();
            let obj = self.track_by_id(&r.object).expect("validated").to_track();
            let (Some(sub), Some(obj)) = (sub.clip(r.begin, r.end), obj.clip(r.begin, r.end))
            else {
                continue;
            };
            out.push(VideoRelationInstance {
                triplet: (sub.category.clone(), r.predicate.clone(), obj.category.clone()),
                subject: sub,
                object: obj,
                score: 1.0,
                span: (r.begin, r.end),
            });
        }
        out
    }

    pub fn to_scored_tracks(&self) -> Vec<ScoredTrack> {
        self.trajectories
            .iter()
            .map(|t| ScoredTrack {
                video: self.video.clone(),
                track: t.to_track(),
                score: 1.0,
            })
            .collect()
    }
}

/// One predicted relation in the challenge submission shape: class triplet,
/// score, frame span, and per-frame trajectories for subject and object
/// aligned to the span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedRelation {
    pub triplet: [String; 3],
    pub score: f64,
    /// Half-open [begin, end).
    pub duration: [usize; 2],
    pub sub_traj: Vec<[f64; 4]>,
    pub obj_traj: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub video: String,
    pub relations: Vec<PredictedRelation>,
}

impl PredictionFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: PredictionFile = serde_json::from_str(text)
            .map_err(|e| VrdError::Invalid(format!("prediction file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VrdError::io(path, e))?;
        PredictionFile::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.relations.iter().enumerate() {
            let len = r.duration[1].saturating_sub(r.duration[0]);
            if len == 0 {
                return Err(VrdError::Invalid(format!(
                    "video '{}' relation {i}: empty duration {:?}",
                    self.video, r.duration
                )));
            }
            if r.sub_traj.len() != len || r.obj_traj.len() != len {
                return Err(VrdError::Invalid(format!(
                    "video '{}' relation {i}: trajectory length {}/{} does not cover duration {len}",
                    self.video,
                    r.sub_traj.len(),
                    r.obj_traj.len()
                )));
            }
            if !r.score.is_finite() {
                return Err(VrdError::Invalid(format!(
                    "video '{}' relation {i}: non-finite score",
                    self.video
                )));
            }
            for boxes in [&r.sub_traj, &r.obj_traj] {
                for &[_, _, w, h] in boxes.iter() {
                    if !(w > 0.0 && h > 0.0) {
                        return Err(VrdError::Invalid(format!(
                            "video '{}' relation {i}: degenerate box",
                            self.video
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_instances(video: &str, instances: &[VideoRelationInstance]) -> Self {
        let relations = instances
            .iter()
            .map(|inst| {
                let clip = |t: &BoxedTrack| -> Vec<[f64; 4]> {
                    let c = t.clip(inst.span.0, inst.span.1).expect("track covers span");
                    c.boxes.iter().map(|b| [b.x, b.y, b.w, b.h]).collect()
                };
                PredictedRelation {
                    triplet: [
                        inst.triplet.0.clone(),
                        inst.triplet.1.clone(),
                        inst.triplet.2.clone(),
                    ],
                    score: inst.score,
                    duration: [inst.span.0, inst.span.1],
                    sub_traj: clip(&inst.subject),
                    obj_traj: clip(&inst.object),
                }
            })
            .collect();
        PredictionFile {
            video: video.to_string(),
            relations,
        }
    }

    pub fn to_instances(&self) -> Vec<VideoRelationInstance> {
        self.relations
            .iter()
            .map(|r| {
                let to_track = |cat: &str, boxes: &[[f64; 4]]| {
                    BoxedTrack::from_boxes(
                        cat,
                        r.duration[0],
                        boxes.iter().map(|&[x, y, w, h]| BBox::new(x, y, w, h)).collect(),
                        1.0,
                    )
                };
                VideoRelationInstance {
                    subject: to_track(&r.triplet[0], &r.sub_traj),
                    object: to_track(&r.triplet[2], &r.obj_traj),
                    triplet: (r.triplet[0].clone(), r.triplet[1].clone(), r.triplet[2].clone()),
                    score: r.score,
                    span: (r.duration[0], r.duration[1]),
                }
            })
            .collect()
    }
}

/// Groups per-video prediction files for the evaluator.
pub fn predictions_by_video(
    files: &[PredictionFile],
) -> BTreeMap<String, Vec<VideoRelationInstance>> {
    files
        .iter()
        .map(|f| (f.video.clone(), f.to_instances()))
        .collect()
}

/// Whole-pipeline configuration; every stage's knobs in one document.
/// Defaults apply to any omitted field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub link: LinkConfig,
    pub segment: SegmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub merge: MergeConfig,
    pub eval: EvalConfig,
    /// Cap on negatives per positive when building training sets.
    pub negative_ratio: f64,
    /// Worker threads for per-video parallelism; 0 = all cores.
    pub workers: usize,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| VrdError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VrdError::Config(format!("cannot read {}: {e}", path.display())))?;
        PipelineConfig::parse(&text)
            .map_err(|e| e.context(path.display().to_string()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| VrdError::Invalid(format!("serialize: {e}")))?;
    std::fs::write(path, text).map_err(|e| VrdError::io(path, e))
}
