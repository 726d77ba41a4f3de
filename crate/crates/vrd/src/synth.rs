//! Deterministic synthetic scenes: rectangles under piecewise-linear motion,
//! jittered/dropped detections, and ground-truth relations derived from
//! closed-form geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VrdError};
use crate::formats::{
    DetectionFile, DetectionRecord, FrameDetections, GroundTruthFile, GtRelation, GtTrack,
    NegativePair,
};

pub const SPATIAL_PREDICATES: [&str; 5] = ["left_of", "right_of", "above", "below", "inside"];
pub const ACTION_PREDICATES: [&str; 2] = ["towards", "away"];

/// Relative center speed below which neither "towards" nor "away" holds.
const APPROACH_EPS: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VelocityPhase {
    /// Number of frames this velocity applies.
    pub frames: usize,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category: String,
    /// Starting box [x, y, w, h].
    pub start: [f64; 4],
    /// Piecewise-linear motion; the last phase extends to the end of the
    /// video.
    pub velocity: Vec<VelocityPhase>,
}

/// Detection suppressed for one object over a frame window, simulating
/// occlusion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub object: usize,
    pub begin: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub frame_count: usize,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectSpec>,
    /// Gaussian pixel noise on detection box position.
    pub jitter_sigma: f64,
    /// Probability a detection is dropped in a frame.
    pub dropout_prob: f64,
    pub occlusions: Vec<OcclusionWindow>,
    pub detection_score: f64,
    pub score_jitter: f64,
    /// Spatial predicates only hold while the centers are within this
    /// distance; pairs beyond it (with no action either) become explicit
    /// negatives.
    pub spatial_max_distance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            frame_count: 96,
            width: 320.0,
            height: 240.0,
            objects: Vec::new(),
            jitter_sigma: 0.0,
            dropout_prob: 0.0,
            occlusions: Vec::new(),
            detection_score: 0.9,
            score_jitter: 0.05,
            spatial_max_distance: 1e9,
        }
    }
}

/// GT box sequences for every object; boxes clamped to stay inside the
/// frame. Returns (tracks, clamped flag per object).
fn simulate(cfg: &SynthConfig) -> (Vec<Vec<[f64; 4]>>, Vec<bool>) {
    let mut tracks = Vec::with_capacity(cfg.objects.len());
    let mut clamped_flags = Vec::with_capacity(cfg.objects.len());
    for obj in &cfg.objects {
        let [mut x, mut y, w, h] = obj.start;
        let mut boxes = Vec::with_capacity(cfg.frame_count);
        let mut clamped = false;
        let mut phase_iter = obj.velocity.iter();
        let mut phase = phase_iter.next();
        let mut left_in_phase = phase.map(|p| p.frames).unwrap_or(usize::MAX);
        for _ in 0..cfg.frame_count {
            let cx = x.clamp(0.0, cfg.width - w);
            let cy = y.clamp(0.0, cfg.height - h);
            if cx != x || cy != y {
                clamped = true;
            }
            boxes.push([cx, cy, w, h]);
            let (vx, vy) = phase.map(|p| (p.vx, p.vy)).unwrap_or((0.0, 0.0));
            x += vx;
            y += vy;
            left_in_phase = left_in_phase.saturating_sub(1);
            if left_in_phase == 0 {
                match phase_iter.next() {
                    Some(p) => {
                        phase = Some(p);
                        left_in_phase = p.frames;
                    }
                    None => {
                        // last phase persists
                        left_in_phase = usize::MAX;
                    }
                }
            }
        }
        tracks.push(boxes);
        clamped_flags.push(clamped);
    }
    (tracks, clamped_flags)
}

fn center(b: &[f64; 4]) -> (f64, f64) {
    (b[0] + b[2] / 2.0, b[1] + b[3] / 2.0)
}

fn inside(sub: &[f64; 4], obj: &[f64; 4]) -> bool {
    sub[0] >= obj[0]
        && sub[1] >= obj[1]
        && sub[0] + sub[2] <= obj[0] + obj[2]
        && sub[1] + sub[3] <= obj[1] + obj[3]
}

/// Single spatial predicate per frame: containment first, then the dominant
/// center-offset axis; none beyond the distance gate.
fn spatial_predicate(sub: &[f64; 4], obj: &[f64; 4], max_distance: f64) -> &'static str {
    if inside(sub, obj) {
        return "inside";
    }
    let (sx, sy) = center(sub);
    let (ox, oy) = center(obj);
    let (dx, dy) = (ox - sx, oy - sy);
    if (dx * dx + dy * dy).sqrt() > max_distance {
        return "";
    }
    if dx.abs() >= dy.abs() {
        if dx >= 0.0 {
            "left_of"
        } else {
            "right_of"
        }
    } else if dy >= 0.0 {
        "above"
    } else {
        "below"
    }
}

fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let (ax, ay) = center(a);
    let (bx, by) = center(b);
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Maximal constant runs of `labels` as (label, begin, end) with empty
/// labels skipped.
fn runs(labels: &[&'static str]) -> Vec<(&'static str, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let l = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == l {
            j += 1;
        }
        if !l.is_empty() {
            out.push((l, i, j));
        }
        i = j;
    }
    out
}

/// Derives GT relations (and explicit negative pairs) from GT box tracks.
/// Deterministic; re-deriving from the emitted trajectories reproduces the
/// same spans.
pub fn derive_relations(
    tracks: &[Vec<[f64; 4]>],
    frame_count: usize,
    spatial_max_distance: f64,
) -> (Vec<GtRelation>, Vec<NegativePair>) {
    let mut relations = Vec::new();
    let mut negatives = Vec::new();
    for (i, sub) in tracks.iter().enumerate() {
        for (j, obj) in tracks.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut spatial = Vec::with_capacity(frame_count);
            let mut action = Vec::with_capacity(frame_count);
            for f in 0..frame_count {
                spatial.push(spatial_predicate(&sub[f], &obj[f], spatial_max_distance));
                let a = if f + 1 < frame_count {
                    let d0 = distance(&sub[f], &obj[f]);
                    let d1 = distance(&sub[f + 1], &obj[f + 1]);
                    if d1 - d0 < -APPROACH_EPS {
                        "towards"
                    } else if d1 - d0 > APPROACH_EPS {
                        "away"
                    } else {
                        ""
                    }
                } else {
                    // last frame inherits the previous label
                    *action.last().unwrap_or(&"")
                };
                action.push(a);
            }
            let mut any = false;
            for (label, begin, end) in runs(&spatial).into_iter().chain(runs(&action)) {
                relations.push(GtRelation {
                    subject: format!("t{i}"),
                    object: format!("t{j}"),
                    predicate: label.to_string(),
                    begin,
                    end,
                });
                any = true;
            }
            if !any {
                negatives.push(NegativePair {
                    subject: format!("t{i}"),
                    object: format!("t{j}"),
                    begin: 0,
                    end: frame_count,
                });
            }
        }
    }
    (relations, negatives)
}

/// Generates one scene: jittered detections plus ground-truth trajectories
/// and relations. The seed fully determines the output.
pub fn generate_scene(cfg: &SynthConfig) -> Result<(DetectionFile, GroundTruthFile)> {
    if cfg.frame_count == 0 {
        return Err(VrdError::Config("synth: frame_count must be positive".into()));
    }
    for (i, o) in cfg.objects.iter().enumerate() {
        if !(o.start[2] > 0.0 && o.start[3] > 0.0) {
            return Err(VrdError::Config(format!("synth: object {i} has degenerate size")));
        }
    }
    let (tracks, _clamped) = simulate(cfg);
    let (relations, negative_pairs) =
        derive_relations(&tracks, cfg.frame_count, cfg.spatial_max_distance);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.jitter_sigma.max(1e-12)).unwrap();
    let score_noise = Normal::new(0.0, cfg.score_jitter.max(1e-12)).unwrap();
    let mut frames = Vec::with_capacity(cfg.frame_count);
    for f in 0..cfg.frame_count {
        let mut dets = Vec::new();
        for (oi, obj) in cfg.objects.iter().enumerate() {
            // draw noise unconditionally so dropout does not shift the
            // stream for other objects
            let dx = if cfg.jitter_sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            let dy = if cfg.jitter_sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            let ds = if cfg.score_jitter > 0.0 { score_noise.sample(&mut rng) } else { 0.0 };
            let dropped = cfg.dropout_prob > 0.0 && rng.gen_bool(cfg.dropout_prob.min(1.0));
            if dropped {
                continue;
            }
            if cfg
                .occlusions
                .iter()
                .any(|o| o.object == oi && f >= o.begin && f < o.end)
            {
                continue;
            }
            let b = tracks[oi][f];
            dets.push(DetectionRecord {
                category: obj.category.clone(),
                score: (cfg.detection_score + ds).clamp(0.05, 1.0),
                bbox: [b[0] + dx, b[1] + dy, b[2], b[3]],
            });
        }
        frames.push(FrameDetections {
            frame_index: f,
            detections: dets,
        });
    }

    let det_file = DetectionFile {
        video: format!("synth-{}", cfg.seed),
        width: cfg.width,
        height: cfg.height,
        frame_count: Some(cfg.frame_count),
        frames,
    };
    let gt_file = GroundTruthFile {
        video: det_file.video.clone(),
        width: cfg.width,
        height: cfg.height,
        frame_count: cfg.frame_count,
        trajectories: cfg
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| GtTrack {
                id: format!("t{i}"),
                category: o.category.clone(),
                start_frame: 0,
                boxes: tracks[i].clone(),
            })
            .collect(),
        relations,
        negative_pairs,
    };
    det_file.validate()?;
    gt_file.validate()?;
    Ok((det_file, gt_file))
}
