//! Detection graph over frames: consecutive-frame IoU linking, the
//! cross-frame linking mechanism (CFLM) that bridges broken tracklets with
//! interpolated zero-confidence nodes, and trajectory extraction by repeated
//! dynamic-programming best-path selection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{area_ratio, interpolate_box, iou, scale_ratio, BoxedTrack, Detection};

/// Node identity: (frame, index within frame). Interpolated nodes are
/// appended after the real detections of their frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub frame: usize,
    pub index: usize,
}

impl NodeId {
    pub fn new(frame: usize, index: usize) -> Self {
        NodeId { frame, index }
    }
}

/// Linking and extraction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    /// Consecutive-frame linking threshold on IoU.
    pub iou_threshold: f64,
    /// Largest bridged gap: t2 - t1 <= max_gap (the gap must stay below 8).
    pub max_gap: usize,
    /// Upper bound on scale_ratio and area_ratio for a bridge.
    pub ratio_gate: f64,
    /// Cap on bridges per tracklet endpoint, smallest gap first.
    pub max_candidates_per_endpoint: usize,
    /// Extraction stops when the best path score drops below this.
    pub min_traj_score: f64,
    /// Extraction stops when the best path is shorter than this.
    pub min_traj_length: usize,
    /// Disable to skip cross-frame linking entirely.
    pub cflm: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            iou_threshold: 0.2,
            max_gap: 7,
            ratio_gate: 2.0,
            max_candidates_per_endpoint: 5,
            min_traj_score: 0.3,
            min_traj_length: 2,
            cflm: true,
        }
    }
}

/// DAG over detections; every edge goes strictly forward in time and, after
/// construction, connects consecutive frames only.
#[derive(Debug, Clone, Default)]
pub struct DetGraph {
    pub nodes: BTreeMap<NodeId, Detection>,
    pub out_edges: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub in_edges: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub frame_count: usize,
    /// Next free per-frame index, for appending interpolated nodes.
    next_index: BTreeMap<usize, usize>,
}

impl DetGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, det: Detection) -> NodeId {
        let frame = det.frame_index;
        let index = self.next_index.entry(frame).or_insert(0);
        let id = NodeId::new(frame, *index);
        *index += 1;
        self.nodes.insert(id, det);
        self.out_edges.insert(id, BTreeSet::new());
        self.in_edges.insert(id, BTreeSet::new());
        id
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId) {
        debug_assert!(from.frame < to.frame);
        self.out_edges.get_mut(&from).unwrap().insert(to);
        self.in_edges.get_mut(&to).unwrap().insert(from);
    }

    fn remove_node(&mut self, id: NodeId) {
        if self.nodes.remove(&id).is_none() {
            return;
        }
        for succ in self.out_edges.remove(&id).unwrap_or_default() {
            if let Some(set) = self.in_edges.get_mut(&succ) {
                set.remove(&id);
            }
        }
        for pred in self.in_edges.remove(&id).unwrap_or_default() {
            if let Some(set) = self.out_edges.get_mut(&pred) {
                set.remove(&id);
            }
        }
    }

    fn successors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.out_edges.get(&id).into_iter().flatten().copied()
    }
}

/// Builds the initial graph: one node per detection, edges between
/// same-category detections in consecutive frames whose IoU exceeds the
/// threshold.
pub fn build_graph(frames: &[Vec<Detection>], cfg: &LinkConfig) -> DetGraph {
    let mut g = DetGraph {
        frame_count: frames.len(),
        ..Default::default()
    };
    let mut ids: Vec<Vec<NodeId>> = Vec::with_capacity(frames.len());
    for (t, dets) in frames.iter().enumerate() {
        let mut frame_ids = Vec::with_capacity(dets.len());
        for det in dets {
            debug_assert_eq!(det.frame_index, t);
            debug_assert!(!det.interpolated);
            frame_ids.push(g.add_node(det.clone()));
        }
        ids.push(frame_ids);
    }
    for t in 0..frames.len().saturating_sub(1) {
        for &u in &ids[t] {
            for &v in &ids[t + 1] {
                let (du, dv) = (&g.nodes[&u], &g.nodes[&v]);
                if du.category == dv.category && iou(&du.bbox, &dv.bbox) > cfg.iou_threshold {
                    g.add_edge(u, v);
                }
            }
        }
    }
    g
}

/// Applies the cross-frame linking mechanism: for tracklet tails (no
/// successor) and heads (no predecessor) of the same category separated by a
/// gap of 2..=max_gap frames and passing both ratio gates, inserts a chain of
/// linearly interpolated zero-score nodes. Each endpoint joins at most
/// `max_candidates_per_endpoint` bridges, smaller gaps preferred, then larger
/// endpoint-box IoU.
pub fn cross_frame_link(g: &mut DetGraph, cfg: &LinkConfig) {
    if !cfg.cflm {
        return;
    }
    let tails: Vec<NodeId> = g
        .nodes
        .keys()
        .copied()
        .filter(|id| g.out_edges[id].is_empty())
        .collect();
    let heads: Vec<NodeId> = g
        .nodes
        .keys()
        .copied()
        .filter(|id| g.in_edges[id].is_empty())
        .collect();

    // Candidate bridges, ordered by (gap asc, iou desc, tail, head) so the
    // greedy cap is deterministic.
    struct Bridge {
        gap: usize,
        endpoint_iou: f64,
        tail: NodeId,
        head: NodeId,
    }
    let mut bridges = Vec::new();
    for &tail in &tails {
        for &head in &heads {
            if head.frame <= tail.frame {
                continue;
            }
            let gap = head.frame - tail.frame;
            if gap < 2 || gap > cfg.max_gap {
                continue;
            }
            let (dt, dh) = (&g.nodes[&tail], &g.nodes[&head]);
            if dt.category != dh.category {
                continue;
            }
            if scale_ratio(&dt.bbox, &dh.bbox) > cfg.ratio_gate
                || area_ratio(&dt.bbox, &dh.bbox) > cfg.ratio_gate
            {
                continue;
            }
            bridges.push(Bridge {
                gap,
                endpoint_iou: iou(&dt.bbox, &dh.bbox),
                tail,
                head,
            });
        }
    }
    bridges.sort_by(|a, b| {
        a.gap
            .cmp(&b.gap)
            .then(b.endpoint_iou.total_cmp(&a.endpoint_iou))
            .then(a.tail.cmp(&b.tail))
            .then(a.head.cmp(&b.head))
    });

    let mut used: BTreeMap<NodeId, usize> = BTreeMap::new();
    for bridge in bridges {
        let tail_used = used.get(&bridge.tail).copied().unwrap_or(0);
        let head_used = used.get(&bridge.head).copied().unwrap_or(0);
        if tail_used >= cfg.max_candidates_per_endpoint
            || head_used >= cfg.max_candidates_per_endpoint
        {
            continue;
        }
        *used.entry(bridge.tail).or_insert(0) += 1;
        *used.entry(bridge.head).or_insert(0) += 1;

        let (box_a, box_b, category) = {
            let (dt, dh) = (&g.nodes[&bridge.tail], &g.nodes[&bridge.head]);
            (dt.bbox, dh.bbox, dt.category.clone())
        };
        let mut prev = bridge.tail;
        for t in bridge.tail.frame + 1..bridge.head.frame {
            let alpha = (t - bridge.tail.frame) as f64 / bridge.gap as f64;
            let id = g.add_node(Detection {
                frame_index: t,
                category: category.clone(),
                score: 0.0,
                bbox: interpolate_box(&box_a, &box_b, alpha),
                interpolated: true,
            });
            g.add_edge(prev, id);
            prev = id;
        }
        g.add_edge(prev, bridge.head);
    }
}

/// Highest-scoring maximal path (one that cannot be extended at either end),
/// score = sum of node confidences. Ties go to the lexicographically smallest
/// node sequence, i.e. earlier start frame first, then lower node index.
///
/// Computed by a suffix DP in reverse frame order, then a deterministic
/// forward walk.
pub fn best_path(g: &DetGraph) -> Option<(Vec<NodeId>, f64)> {
    if g.is_empty() {
        return None;
    }
    // best[v] = max total score of a path from v to some sink.
    let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (&id, det) in g.nodes.iter().rev() {
        let tail = g
            .successors(id)
            .map(|s| best[&s])
            .fold(f64::NEG_INFINITY, f64::max);
        let tail = if tail.is_finite() { tail } else { 0.0 };
        best.insert(id, det.score + tail);
    }
    // Start: source node (no predecessors) with max total, smallest id wins.
    let start = g
        .nodes
        .keys()
        .copied()
        .filter(|id| g.in_edges[id].is_empty())
        .max_by(|a, b| best[a].total_cmp(&best[b]).then(b.cmp(a)))?;
    let score = best[&start];
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let next = g
            .successors(cur)
            .max_by(|a, b| best[a].total_cmp(&best[b]).then(b.cmp(a)));
        match next {
            Some(n) => {
                path.push(n);
                cur = n;
            }
            None => break,
        }
    }
    Some((path, score))
}

/// Converts a path of graph nodes (consecutive frames) into a track.
fn path_to_track(g: &DetGraph, path: &[NodeId]) -> BoxedTrack {
    let first = &g.nodes[&path[0]];
    let mut boxes = Vec::with_capacity(path.len());
    let mut scores = Vec::with_capacity(path.len());
    let mut interp = Vec::with_capacity(path.len());
    for id in path {
        let det = &g.nodes[id];
        boxes.push(det.bbox);
        scores.push(det.score);
        interp.push(det.interpolated);
    }
    BoxedTrack::new(first.category.clone(), first.frame_index, boxes, scores, interp)
}

/// Repeatedly extracts the best path as a trajectory, removing its nodes
/// (plus interpolated nodes left dangling) until the best path falls below
/// the score or length floor, or the graph empties.
pub fn extract_trajectories(g: &mut DetGraph, cfg: &LinkConfig) -> Vec<BoxedTrack> {
    let mut out = Vec::new();
    while let Some((path, score)) = best_path(g) {
        if score < cfg.min_traj_score || path.len() < cfg.min_traj_length {
            break;
        }
        out.push(path_to_track(g, &path));
        for id in path {
            g.remove_node(id);
        }
        // Interpolated nodes only make sense in the middle of a bridge;
        // drop any that lost a neighbor.
        loop {
            let dangling: Vec<NodeId> = g
                .nodes
                .iter()
                .filter(|(id, det)| {
                    det.interpolated
                        && (g.in_edges[id].is_empty() || g.out_edges[id].is_empty())
                })
                .map(|(id, _)| *id)
                .collect();
            if dangling.is_empty() {
                break;
            }
            for id in dangling {
                g.remove_node(id);
            }
        }
    }
    out
}

/// Full tracker for one clip: build, bridge, extract.
pub fn track_detections(frames: &[Vec<Detection>], cfg: &LinkConfig) -> Vec<BoxedTrack> {
    let mut g = build_graph(frames, cfg);
    cross_frame_link(&mut g, cfg);
    extract_trajectories(&mut g, cfg)
}
