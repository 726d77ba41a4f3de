//! Geometric kernels shared by every other module: IoU, the shape/area ratio
//! gates used by cross-frame linking, box interpolation, and spatio-temporal
//! vIoU of trajectories.

use serde::{Deserialize, Serialize};

/// Axis-aligned bounding box, `(x, y)` top-left corner plus width and height,
/// all in pixels. `w` and `h` must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        debug_assert!(w > 0.0 && h > 0.0, "degenerate box {w}x{h}");
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    /// Tight cover of both boxes.
    pub fn union_box(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    /// True iff the point lies strictly inside the box (boundary excluded on
    /// the far edges, included on the near edges).
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }
}

/// Intersection area over union area. Symmetric, in [0, 1], 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Ratio of the two aspect ratios h/w, larger over smaller. Always >= 1.
pub fn scale_ratio(a: &BBox, b: &BBox) -> f64 {
    // h2/w2 > h1/w1  <=>  h2*w1 > w2*h1
    if b.h * a.w > b.w * a.h {
        (b.h * a.w) / (b.w * a.h)
    } else {
        (a.h * b.w) / (a.w * b.h)
    }
}

/// Ratio of the two areas, larger over smaller. Always >= 1.
pub fn area_ratio(a: &BBox, b: &BBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa > ab {
        aa / ab
    } else {
        ab / aa
    }
}

/// Component-wise linear interpolation `(1-alpha)*a + alpha*b` on (x, y, w, h).
pub fn interpolate_box(a: &BBox, b: &BBox, alpha: f64) -> BBox {
    debug_assert!((0.0..=1.0).contains(&alpha));
    BBox {
        x: (1.0 - alpha) * a.x + alpha * b.x,
        y: (1.0 - alpha) * a.y + alpha * b.y,
        w: (1.0 - alpha) * a.w + alpha * b.w,
        h: (1.0 - alpha) * a.h + alpha * b.h,
    }
}

/// One categorized, scored bounding box in one frame; the graph node payload.
///
/// Interpolated detections (inserted by cross-frame linking) carry score 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    pub category: String,
    pub score: f64,
    pub bbox: BBox,
    #[serde(default)]
    pub interpolated: bool,
}

impl Detection {
    pub fn new(frame_index: usize, category: impl Into<String>, score: f64, bbox: BBox) -> Self {
        Detection {
            frame_index,
            category: category.into(),
            score,
            bbox,
            interpolated: false,
        }
    }
}

/// Per-frame box sequence for one object over consecutive frames, with the
/// node scores it was built from and an overall confidence (mean score over
/// non-interpolated nodes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxedTrack {
    pub category: String,
    pub start_frame: usize,
    pub boxes: Vec<BBox>,
    pub node_scores: Vec<f64>,
    /// Which nodes were inserted by interpolation (score 0, excluded from
    /// the confidence mean).
    pub interpolated: Vec<bool>,
    pub confidence: f64,
}

impl BoxedTrack {
    pub fn new(
        category: impl Into<String>,
        start_frame: usize,
        boxes: Vec<BBox>,
        node_scores: Vec<f64>,
        interpolated: Vec<bool>,
    ) -> Self {
        assert_eq!(boxes.len(), node_scores.len());
        assert_eq!(boxes.len(), interpolated.len());
        assert!(!boxes.is_empty());
        let real: Vec<f64> = node_scores
            .iter()
            .zip(&interpolated)
            .filter(|(_, interp)| !**interp)
            .map(|(s, _)| *s)
            .collect();
        let confidence = if real.is_empty() {
            0.0
        } else {
            real.iter().sum::<f64>() / real.len() as f64
        };
        BoxedTrack {
            category: category.into(),
            start_frame,
            boxes,
            node_scores,
            interpolated,
            confidence,
        }
    }

    /// Track from plain boxes, one score per box, no interpolated nodes.
    pub fn from_boxes(
        category: impl Into<String>,
        start_frame: usize,
        boxes: Vec<BBox>,
        score: f64,
    ) -> Self {
        let n = boxes.len();
        BoxedTrack::new(category, start_frame, boxes, vec![score; n], vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Half-open frame span [start, end).
    pub fn span(&self) -> (usize, usize) {
        (self.start_frame, self.start_frame + self.boxes.len())
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame < self.start_frame + self.boxes.len()
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        if self.covers(frame) {
            Some(&self.boxes[frame - self.start_frame])
        } else {
            None
        }
    }

    /// Box at `frame` with endpoint replication outside the span.
    pub fn box_at_clamped(&self, frame: usize) -> &BBox {
        let (begin, end) = self.span();
        let f = frame.clamp(begin, end - 1);
        &self.boxes[f - begin]
    }

    /// Restriction of the track to the half-open frame interval, if the
    /// intersection is non-empty.
    pub fn clip(&self, begin: usize, end: usize) -> Option<BoxedTrack> {
        let (sb, se) = self.span();
        let b = sb.max(begin);
        let e = se.min(end);
        if b >= e {
            return None;
        }
        Some(BoxedTrack::new(
            self.category.clone(),
            b,
            self.boxes[b - sb..e - sb].to_vec(),
            self.node_scores[b - sb..e - sb].to_vec(),
            self.interpolated[b - sb..e - sb].to_vec(),
        ))
    }
}

/// Number of frames in the overlap of two half-open spans.
fn span_intersection(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Spatio-temporal overlap of two trajectories: summed per-frame IoU over the
/// temporal intersection divided by the length of the temporal union.
pub fn viou(a: &BoxedTrack, b: &BoxedTrack) -> f64 {
    let (ab, ae) = a.span();
    let (bb, be) = b.span();
    let inter_begin = ab.max(bb);
    let inter_end = ae.min(be);
    if inter_begin >= inter_end {
        return 0.0;
    }
    let union_len = (ae.max(be) - ab.min(bb)) as f64;
    let mut sum = 0.0;
    for f in inter_begin..inter_end {
        sum += iou(a.box_at(f).unwrap(), b.box_at(f).unwrap());
    }
    sum / union_len
}

/// vIoU of the two tracks restricted to their overlapping frame span only
/// (mean per-frame IoU over the overlap). Used by greedy merging, which
/// compares tracks where they co-exist.
pub fn viou_over_overlap(a: &BoxedTrack, b: &BoxedTrack) -> f64 {
    let (ab, ae) = a.span();
    let (bb, be) = b.span();
    let inter = span_intersection((ab, ae), (bb, be));
    if inter == 0 {
        return 0.0;
    }
    let begin = ab.max(bb);
    let mut sum = 0.0;
    for f in begin..begin + inter {
        sum += iou(a.box_at(f).unwrap(), b.box_at(f).unwrap());
    }
    sum / inter as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pixel-rasterization IoU oracle: count unit cells whose center lies in
    /// each box, on an integer grid. Exact for integer-coordinate boxes.
    fn iou_raster_oracle(a: &BBox, b: &BBox, grid: usize) -> f64 {
        let mut inter = 0u64;
        let mut union = 0u64;
        for gy in 0..grid {
            for gx in 0..grid {
                let (cx, cy) = (gx as f64 + 0.5, gy as f64 + 0.5);
                let ina = a.contains_point(cx, cy);
                let inb = b.contains_point(cx, cy);
                if ina && inb {
                    inter += 1;
                }
                if ina || inb {
                    union += 1;
                }
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    #[test]
    fn iou_identical() {
        assert_eq!(iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(0.0, 0.0, 2.0, 2.0)), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        assert_eq!(iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(5.0, 5.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn iou_partial_matches_raster_oracle() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let b = bb(1.0, 0.0, 2.0, 2.0);
        let got = iou(&a, &b);
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
        assert!((got - iou_raster_oracle(&a, &b, 8)).abs() < 1e-9);
    }

    #[test]
    fn scale_ratio_cases() {
        assert_eq!(
            scale_ratio(&bb(0.0, 0.0, 2.0, 2.0), &bb(0.0, 0.0, 4.0, 4.0)),
            1.0
        );
        // h2/w2 = 1 > h1/w1 = 0.5 -> (h2*w1)/(w2*h1) = (2*4)/(2*2) = 2
        assert_eq!(
            scale_ratio(&bb(0.0, 0.0, 4.0, 2.0), &bb(0.0, 0.0, 2.0, 2.0)),
            2.0
        );
    }

    #[test]
    fn area_ratio_cases() {
        assert_eq!(
            area_ratio(&bb(0.0, 0.0, 2.0, 2.0), &bb(0.0, 0.0, 2.0, 2.0)),
            1.0
        );
        assert_eq!(
            area_ratio(&bb(0.0, 0.0, 2.0, 2.0), &bb(0.0, 0.0, 4.0, 4.0)),
            4.0
        );
    }

    #[test]
    fn area_ratio_monotone_in_growing_area() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let mut prev = area_ratio(&a, &bb(0.0, 0.0, 2.0, 2.5));
        for k in 3..8 {
            let next = area_ratio(&a, &bb(0.0, 0.0, 2.0, k as f64));
            assert!(next > prev);
            prev = next;
        }
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(8.0, 0.0, 10.0, 10.0);
        assert_eq!(interpolate_box(&a, &b, 0.0), a);
        assert_eq!(interpolate_box(&a, &b, 1.0), b);
        assert_eq!(interpolate_box(&a, &b, 0.5), bb(4.0, 0.0, 10.0, 10.0));
        let c = bb(0.0, 0.0, 20.0, 30.0);
        assert_eq!(interpolate_box(&a, &c, 0.5), bb(0.0, 0.0, 15.0, 20.0));
    }

    #[test]
    fn viou_identical_and_disjoint() {
        let boxes = vec![bb(0.0, 0.0, 4.0, 4.0); 10];
        let a = BoxedTrack::from_boxes("dog", 0, boxes.clone(), 0.9);
        assert!((viou(&a, &a) - 1.0).abs() < 1e-12);
        let far = BoxedTrack::from_boxes("dog", 20, boxes.clone(), 0.9);
        assert_eq!(viou(&a, &far), 0.0);
    }

    #[test]
    fn viou_partial_overlap() {
        // identical boxes, frames [0,10) vs [5,15): 5 frames of IoU 1 over
        // union 15 -> 1/3
        let boxes = vec![bb(0.0, 0.0, 4.0, 4.0); 10];
        let a = BoxedTrack::from_boxes("dog", 0, boxes.clone(), 0.9);
        let b = BoxedTrack::from_boxes("dog", 5, boxes, 0.9);
        assert!((viou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((viou_over_overlap(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn track_confidence_ignores_interpolated_nodes() {
        let t = BoxedTrack::new(
            "cat",
            0,
            vec![bb(0.0, 0.0, 1.0, 1.0); 3],
            vec![0.8, 0.0, 0.6],
            vec![false, true, false],
        );
        assert!((t.confidence - 0.7).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..50.0f64, 0.0..50.0f64, 0.5..30.0f64, 0.5..30.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    fn arb_int_box() -> impl Strategy<Value = BBox> {
        (0u32..40, 0u32..40, 1u32..24, 1u32..24)
            .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #[test]
        fn symmetry(a in arb_box(), b in arb_box()) {
            prop_assert!((iou(&a, &b) - iou(&b, &a)).abs() < 1e-12);
            prop_assert!((scale_ratio(&a, &b) - scale_ratio(&b, &a)).abs() < 1e-9);
            prop_assert!((area_ratio(&a, &b) - area_ratio(&b, &a)).abs() < 1e-9);
        }

        #[test]
        fn ratios_at_least_one(a in arb_box(), b in arb_box()) {
            prop_assert!(scale_ratio(&a, &b) >= 1.0 - 1e-12);
            prop_assert!(area_ratio(&a, &b) >= 1.0 - 1e-12);
        }

        #[test]
        fn iou_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            if a != b {
                prop_assert!(v < 1.0 + 1e-12);
            }
        }

        #[test]
        fn iou_matches_raster_oracle_on_integer_boxes(a in arb_int_box(), b in arb_int_box()) {
            prop_assert!((iou(&a, &b) - iou_raster_oracle(&a, &b, 64)).abs() < 1e-9);
        }
    }
}
