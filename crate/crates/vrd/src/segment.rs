//! Fixed-length overlapped video segments, per-segment tracking, and
//! candidate subject-object pair enumeration.

use serde::{Deserialize, Serialize};

use crate::geometry::{BoxedTrack, Detection};
use crate::graph::{track_detections, LinkConfig};

/// Half-open frame interval of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub begin: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.begin
    }

    pub fn middle_frame(&self) -> usize {
        self.begin + self.len() / 2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub segment_length: usize,
    pub stride: usize,
    /// A pair qualifies only if both tracks overlap each other at least this
    /// many frames inside the segment.
    pub min_pair_overlap: usize,
    /// A pair qualifies only if both tracks cover the segment's middle frame.
    pub require_middle_frame: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            segment_length: 32,
            stride: 16,
            min_pair_overlap: 8,
            require_middle_frame: true,
        }
    }
}

/// Ordered subject-object candidate within one segment. Indices refer to the
/// segment's trajectory list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryPair {
    pub subject: usize,
    pub object: usize,
    pub segment: Segment,
}

/// Segments start at multiples of the stride while a full segment fits; a
/// tail segment anchored at `T - segment_length` covers the remainder.
/// Videos shorter than one segment become a single short segment.
pub fn split_segments(frame_count: usize, cfg: &SegmentConfig) -> Vec<Segment> {
    let len = cfg.segment_length;
    if frame_count == 0 {
        return Vec::new();
    }
    if frame_count <= len {
        return vec![Segment {
            begin: 0,
            end: frame_count,
        }];
    }
    let mut out = Vec::new();
    let mut begin = 0;
    while begin + len <= frame_count {
        out.push(Segment {
            begin,
            end: begin + len,
        });
        begin += cfg.stride;
    }
    let tail = frame_count - len;
    if out.last().map(|s| s.begin) != Some(tail) {
        out.push(Segment {
            begin: tail,
            end: frame_count,
        });
    }
    out
}

/// Runs the tracker on the detections restricted to the segment's frames.
pub fn track_segment(
    frames: &[Vec<Detection>],
    seg: Segment,
    cfg: &LinkConfig,
) -> Vec<BoxedTrack> {
    let end = seg.end.min(frames.len());
    if seg.begin >= end {
        return Vec::new();
    }
    let clipped: Vec<Vec<Detection>> = frames[seg.begin..end]
        .iter()
        .enumerate()
        .map(|(offset, dets)| {
            dets.iter()
                .map(|d| {
                    let mut d = d.clone();
                    d.frame_index = offset;
                    d
                })
                .collect()
        })
        .collect();
    let mut tracks = track_detections(&clipped, cfg);
    for t in &mut tracks {
        t.start_frame += seg.begin;
    }
    tracks
}

fn pair_overlap_in_segment(a: &BoxedTrack, b: &BoxedTrack, seg: Segment) -> usize {
    let (ab, ae) = a.span();
    let (bb, be) = b.span();
    let begin = ab.max(bb).max(seg.begin);
    let end = ae.min(be).min(seg.end);
    end.saturating_sub(begin)
}

/// All ordered pairs (subject, object) of distinct trajectories that pass
/// the middle-frame and mutual-overlap gates. Order: subject extraction
/// order, then object.
pub fn enumerate_pairs(
    trajs: &[BoxedTrack],
    seg: Segment,
    cfg: &SegmentConfig,
) -> Vec<TrajectoryPair> {
    let qualifies = |t: &BoxedTrack| !cfg.require_middle_frame || t.covers(seg.middle_frame());
    let mut out = Vec::new();
    for (i, sub) in trajs.iter().enumerate() {
        if !qualifies(sub) {
            continue;
        }
        for (j, obj) in trajs.iter().enumerate() {
            if i == j || !qualifies(obj) {
                continue;
            }
            if pair_overlap_in_segment(sub, obj, seg) < cfg.min_pair_overlap {
                continue;
            }
            out.push(TrajectoryPair {
                subject: i,
                object: j,
                segment: seg,
            });
        }
    }
    out
}
