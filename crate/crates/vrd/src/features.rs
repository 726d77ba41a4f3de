//! Multi-modal pair features: motion (sampled location descriptors), binary
//! location masks, language embeddings, and ingested visual vectors.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;

use crate::error::{Result, VrdError};
use crate::geometry::{iou, BBox, BoxedTrack};
use crate::segment::Segment;

pub const MOTION_DIM: usize = 90;
pub const MASK_SIDE: usize = 32;
pub const MASK_DIM: usize = 2 * MASK_SIDE * MASK_SIDE;
pub const LANGUAGE_DIM: usize = 600;
pub const EMBEDDING_DIM: usize = 300;
pub const VISUAL_DIM: usize = 3 * 4096;

/// Frame offsets (relative to segment begin) at which location descriptors
/// are sampled; the last offset is clamped to the segment's final frame.
pub const SAMPLE_OFFSETS: [usize; 5] = [0, 8, 16, 24, 31];

/// Assembled feature block for one ordered trajectory pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub motion: Vec<f64>,
    pub mask: Vec<u8>,
    pub language: Vec<f64>,
    pub visual: Vec<f64>,
}

/// 10-d per-frame location descriptor for a subject/object box pair:
/// relative offset, log size ratios, normalized subject geometry, object
/// area fraction, and IoU.
pub fn frame_pair_descriptor(sub: &BBox, obj: &BBox, frame_w: f64, frame_h: f64) -> [f64; 10] {
    [
        (obj.x - sub.x) / sub.w,
        (obj.y - sub.y) / sub.h,
        (obj.w / sub.w).ln(),
        (obj.h / sub.h).ln(),
        sub.x / frame_w,
        sub.y / frame_h,
        sub.w / frame_w,
        sub.h / frame_h,
        (obj.w * obj.h) / (frame_w * frame_h),
        iou(sub, obj),
    ]
}

/// 90-d motion feature: descriptors at the five sample frames (static, 50-d)
/// followed by differences of the later four against the first (dynamic,
/// 40-d). Tracks not reaching a sample frame contribute their nearest
/// endpoint box.
pub fn motion_feature(
    sub: &BoxedTrack,
    obj: &BoxedTrack,
    seg: Segment,
    frame_w: f64,
    frame_h: f64,
) -> Vec<f64> {
    let mut descriptors = Vec::with_capacity(SAMPLE_OFFSETS.len());
    for &off in &SAMPLE_OFFSETS {
        let frame = (seg.begin + off).min(seg.end - 1);
        descriptors.push(frame_pair_descriptor(
            sub.box_at_clamped(frame),
            obj.box_at_clamped(frame),
            frame_w,
            frame_h,
        ));
    }
    let mut out = Vec::with_capacity(MOTION_DIM);
    for d in &descriptors {
        out.extend_from_slice(d);
    }
    for d in &descriptors[1..] {
        for (a, b) in d.iter().zip(&descriptors[0]) {
            out.push(a - b);
        }
    }
    out
}

/// Rasterizes one box onto the 32x32 grid normalized to the frame extent;
/// a cell is set iff its center lies inside the box.
fn rasterize(b: &BBox, frame_w: f64, frame_h: f64, grid: &mut [u8]) {
    for gy in 0..MASK_SIDE {
        for gx in 0..MASK_SIDE {
            let cx = (gx as f64 + 0.5) / MASK_SIDE as f64 * frame_w;
            let cy = (gy as f64 + 0.5) / MASK_SIDE as f64 * frame_h;
            if b.contains_point(cx, cy) {
                grid[gy * MASK_SIDE + gx] = 1;
            }
        }
    }
}

/// Two-channel binary location mask at the segment's middle frame:
/// channel 0 subject, channel 1 object. Flattened, 2048 entries in {0,1}.
pub fn mask_feature(
    sub: &BoxedTrack,
    obj: &BoxedTrack,
    seg: Segment,
    frame_w: f64,
    frame_h: f64,
) -> Vec<u8> {
    let mid = seg.middle_frame();
    let mut out = vec![0u8; MASK_DIM];
    rasterize(sub.box_at_clamped(mid), frame_w, frame_h, &mut out[..MASK_SIDE * MASK_SIDE]);
    rasterize(obj.box_at_clamped(mid), frame_w, frame_h, &mut out[MASK_SIDE * MASK_SIDE..]);
    out
}

/// Category -> 300-d embedding, loaded from a JSON map.
#[derive(Debug, Clone, Default)]
pub struct CategoryEmbeddingTable {
    embeddings: HashMap<String, Vec<f64>>,
}

impl CategoryEmbeddingTable {
    pub fn new(embeddings: HashMap<String, Vec<f64>>) -> Result<Self> {
        for (cat, v) in &embeddings {
            if v.len() != EMBEDDING_DIM {
                return Err(VrdError::Invalid(format!(
                    "embedding for '{cat}' has {} dims, expected {EMBEDDING_DIM}",
                    v.len()
                )));
            }
        }
        Ok(CategoryEmbeddingTable { embeddings })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: HashMap<String, Vec<f64>> = serde_json::from_str(text)
            .map_err(|e| VrdError::Invalid(format!("embedding table: {e}")))?;
        CategoryEmbeddingTable::new(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VrdError::io(path, e))?;
        CategoryEmbeddingTable::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// Deterministic fallback table: a seeded pseudo-random unit-scale vector
    /// per category name. Lets the pipeline run without a real word-vector
    /// export; the same name always maps to the same vector.
    pub fn hashed(categories: &[String]) -> Self {
        use rand::{Rng, SeedableRng};
        let mut embeddings = HashMap::new();
        for cat in categories {
            let mut seed = [0u8; 32];
            for (i, b) in cat.bytes().enumerate() {
                seed[i % 32] ^= b;
            }
            let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
            let v: Vec<f64> = (0..EMBEDDING_DIM)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            embeddings.insert(cat.clone(), v);
        }
        CategoryEmbeddingTable { embeddings }
    }

    pub fn get(&self, category: &str) -> Result<&[f64]> {
        self.embeddings
            .get(category)
            .map(|v| v.as_slice())
            .ok_or_else(|| VrdError::UnknownCategory(category.to_string()))
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.embeddings.keys().map(|s| s.as_str())
    }
}

/// 600-d language feature: subject embedding followed by object embedding.
pub fn language_feature(
    sub_cat: &str,
    obj_cat: &str,
    table: &CategoryEmbeddingTable,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(LANGUAGE_DIM);
    out.extend_from_slice(table.get(sub_cat)?);
    out.extend_from_slice(table.get(obj_cat)?);
    Ok(out)
}

/// Quantized lookup key: box coordinates rounded to integer pixels.
fn quantize(b: &BBox) -> [i64; 4] {
    [
        b.x.round() as i64,
        b.y.round() as i64,
        b.w.round() as i64,
        b.h.round() as i64,
    ]
}

#[derive(Debug, Deserialize)]
struct VisualRecord {
    video: String,
    frame: usize,
    bbox: [f64; 4],
    feat: Vec<f64>,
}

/// Pre-extracted 4096-d appearance vectors keyed by (video, frame,
/// integer-quantized box). Misses degrade to zero vectors and are counted.
#[derive(Debug, Default)]
pub struct VisualFeatureStore {
    features: HashMap<(String, usize, [i64; 4]), Vec<f64>>,
    misses: AtomicUsize,
}

impl VisualFeatureStore {
    /// Parses JSON-lines records `{video, frame, bbox:[x,y,w,h], feat:[...]}`.
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut features = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| VrdError::io("<visual store>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VisualRecord = serde_json::from_str(&line).map_err(|e| {
                VrdError::Parse {
                    path: "<visual store>".into(),
                    line: Some(lineno + 1),
                    msg: e.to_string(),
                }
            })?;
            if rec.feat.len() != 4096 {
                return Err(VrdError::parse_line(
                    "<visual store>",
                    lineno + 1,
                    format!("feat has {} dims, expected 4096", rec.feat.len()),
                ));
            }
            let b = BBox::new(rec.bbox[0], rec.bbox[1], rec.bbox[2], rec.bbox[3]);
            features.insert((rec.video, rec.frame, quantize(&b)), rec.feat);
        }
        Ok(VisualFeatureStore {
            features,
            misses: AtomicUsize::new(0),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| VrdError::io(path, e))?;
        VisualFeatureStore::parse(std::io::BufReader::new(file))
            .map_err(|e| e.context(path.display().to_string()))
    }

    pub fn insert(&mut self, video: &str, frame: usize, bbox: &BBox, feat: Vec<f64>) {
        self.features
            .insert((video.to_string(), frame, quantize(bbox)), feat);
    }

    fn lookup(&self, video: &str, frame: usize, bbox: &BBox) -> Vec<f64> {
        match self
            .features
            .get(&(video.to_string(), frame, quantize(bbox)))
        {
            Some(v) => v.clone(),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                vec![0.0; 4096]
            }
        }
    }

    pub fn miss_count(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// 3x4096 visual feature: subject box, object box, and their union box at
/// the segment's middle frame. Without a store, three zero vectors.
pub fn visual_feature(
    video: &str,
    sub: &BoxedTrack,
    obj: &BoxedTrack,
    seg: Segment,
    store: Option<&VisualFeatureStore>,
) -> Vec<f64> {
    let Some(store) = store else {
        return vec![0.0; VISUAL_DIM];
    };
    let mid = seg.middle_frame();
    let sb = sub.box_at_clamped(mid);
    let ob = obj.box_at_clamped(mid);
    let ub = sb.union_box(ob);
    let mut out = Vec::with_capacity(VISUAL_DIM);
    out.extend(store.lookup(video, mid, sb));
    out.extend(store.lookup(video, mid, ob));
    out.extend(store.lookup(video, mid, &ub));
    out
}

/// Assembles all four feature families for one ordered pair.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    video: &str,
    sub: &BoxedTrack,
    obj: &BoxedTrack,
    seg: Segment,
    frame_w: f64,
    frame_h: f64,
    table: &CategoryEmbeddingTable,
    store: Option<&VisualFeatureStore>,
) -> Result<PairFeature> {
    Ok(PairFeature {
        motion: motion_feature(sub, obj, seg, frame_w, frame_h),
        mask: mask_feature(sub, obj, seg, frame_w, frame_h),
        language: language_feature(&sub.category, &obj.category, table)?,
        visual: visual_feature(video, sub, obj, seg, store),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    fn seg32() -> Segment {
        Segment { begin: 0, end: 32 }
    }

    #[test]
    fn descriptor_identical_boxes() {
        let b = bb(10.0, 20.0, 40.0, 30.0);
        let d = frame_pair_descriptor(&b, &b, 100.0, 100.0);
        assert_eq!(&d[..4], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d[4], 0.1);
        assert_eq!(d[5], 0.2);
        assert_eq!(d[6], 0.4);
        assert_eq!(d[7], 0.3);
        assert_eq!(d[8], 0.12);
        assert_eq!(d[9], 1.0);
    }

    #[test]
    fn descriptor_log_ratio_and_disjoint_iou() {
        let s = bb(0.0, 0.0, 10.0, 10.0);
        let o = bb(0.0, 0.0, 20.0, 10.0);
        let d = frame_pair_descriptor(&s, &o, 100.0, 100.0);
        assert!((d[2] - 2.0f64.ln()).abs() < 1e-12);
        let far = bb(50.0, 50.0, 10.0, 10.0);
        assert_eq!(frame_pair_descriptor(&s, &far, 100.0, 100.0)[9], 0.0);
    }

    fn still_track(cat: &str, b: BBox, len: usize) -> BoxedTrack {
        BoxedTrack::from_boxes(cat, 0, vec![b; len], 0.9)
    }

    #[test]
    fn motion_static_pair_has_zero_dynamic_block() {
        let sub = still_track("a", bb(0.0, 0.0, 10.0, 10.0), 32);
        let obj = still_track("b", bb(20.0, 0.0, 10.0, 10.0), 32);
        let m = motion_feature(&sub, &obj, seg32(), 100.0, 100.0);
        assert_eq!(m.len(), MOTION_DIM);
        assert!(m[50..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn motion_linear_velocity_scales_dynamic_differences() {
        // subject moves +2 px/frame in x, object still
        let boxes: Vec<BBox> = (0..32).map(|f| bb(2.0 * f as f64, 0.0, 10.0, 10.0)).collect();
        let sub = BoxedTrack::from_boxes("a", 0, boxes, 0.9);
        let obj = still_track("b", bb(50.0, 0.0, 10.0, 10.0), 32);
        let m = motion_feature(&sub, &obj, seg32(), 200.0, 200.0);
        // translation components of the descriptor: index 0 ((xo-xs)/ws) and
        // index 4 (xs/W). dynamic block starts at 50; feat_8-feat_0 at 50..60,
        // feat_16-feat_0 at 60..70.
        assert!((m[60] - 2.0 * m[50]).abs() < 1e-9);
        assert!((m[64] - 2.0 * m[54]).abs() < 1e-9);
    }

    /// Brute-force cell-center containment oracle.
    fn mask_oracle(b: &BBox, w: f64, h: f64) -> Vec<u8> {
        let mut out = vec![0u8; MASK_SIDE * MASK_SIDE];
        for gy in 0..MASK_SIDE {
            for gx in 0..MASK_SIDE {
                let cx = (gx as f64 + 0.5) * w / 32.0;
                let cy = (gy as f64 + 0.5) * h / 32.0;
                if cx >= b.x && cx < b.x + b.w && cy >= b.y && cy < b.y + b.h {
                    out[gy * 32 + gx] = 1;
                }
            }
        }
        out
    }

    #[test]
    fn mask_full_frame_and_half_frame() {
        let full = still_track("a", bb(0.0, 0.0, 100.0, 100.0), 32);
        let half = still_track("b", bb(0.0, 0.0, 50.0, 100.0), 32);
        let m = mask_feature(&full, &half, seg32(), 100.0, 100.0);
        assert_eq!(m.len(), MASK_DIM);
        let ones0: usize = m[..1024].iter().map(|&v| v as usize).sum();
        let ones1: usize = m[1024..].iter().map(|&v| v as usize).sum();
        assert_eq!(ones0, 1024);
        assert_eq!(ones1, 512);
        assert_eq!(&m[1024..], mask_oracle(&bb(0.0, 0.0, 50.0, 100.0), 100.0, 100.0).as_slice());
    }

    #[test]
    fn mask_disjoint_boxes_do_not_intersect() {
        let a = still_track("a", bb(0.0, 0.0, 40.0, 40.0), 32);
        let b = still_track("b", bb(60.0, 60.0, 40.0, 40.0), 32);
        let m = mask_feature(&a, &b, seg32(), 100.0, 100.0);
        for i in 0..1024 {
            assert_eq!(m[i] * m[1024 + i], 0);
        }
    }

    #[test]
    fn language_concat_and_swap() {
        let mut raw = HashMap::new();
        raw.insert("dog".to_string(), vec![1.0; EMBEDDING_DIM]);
        raw.insert("cat".to_string(), vec![2.0; EMBEDDING_DIM]);
        let table = CategoryEmbeddingTable::new(raw).unwrap();
        let dc = language_feature("dog", "cat", &table).unwrap();
        let cd = language_feature("cat", "dog", &table).unwrap();
        assert_eq!(dc.len(), LANGUAGE_DIM);
        assert_eq!(&dc[..300], &cd[300..]);
        assert_eq!(&dc[300..], &cd[..300]);
        assert!(matches!(
            language_feature("zebra", "cat", &table),
            Err(VrdError::UnknownCategory(c)) if c == "zebra"
        ));
    }

    #[test]
    fn embedding_table_round_trips_through_json() {
        let json = r#"{"dog": [0.5, -0.25]}"#;
        // wrong dimension must fail
        assert!(CategoryEmbeddingTable::parse(json).is_err());
        let v: Vec<f64> = (0..300).map(|i| i as f64 / 300.0).collect();
        let json = serde_json::to_string(&HashMap::from([("dog".to_string(), v.clone())])).unwrap();
        let table = CategoryEmbeddingTable::parse(&json).unwrap();
        assert_eq!(table.get("dog").unwrap(), v.as_slice());
    }

    #[test]
    fn visual_stub_and_store_lookup() {
        let sub = still_track("a", bb(0.0, 0.0, 10.0, 10.0), 32);
        let obj = still_track("b", bb(20.0, 0.0, 10.0, 10.0), 32);
        let v = visual_feature("v0", &sub, &obj, seg32(), None);
        assert_eq!(v.len(), VISUAL_DIM);
        assert!(v.iter().all(|&x| x == 0.0));

        let mut store = VisualFeatureStore::default();
        let mid = seg32().middle_frame();
        store.insert("v0", mid, &bb(0.0, 0.0, 10.0, 10.0), vec![1.0; 4096]);
        store.insert("v0", mid, &bb(20.0, 0.0, 10.0, 10.0), vec![2.0; 4096]);
        // union box of the two is (0,0,30,10)
        store.insert("v0", mid, &bb(0.0, 0.0, 30.0, 10.0), vec![3.0; 4096]);
        let v = visual_feature("v0", &sub, &obj, seg32(), Some(&store));
        assert_eq!(v[0], 1.0);
        assert_eq!(v[4096], 2.0);
        assert_eq!(v[8192], 3.0);
        assert_eq!(store.miss_count(), 0);

        let stranger = still_track("c", bb(70.0, 70.0, 5.0, 5.0), 32);
        let v = visual_feature("v0", &stranger, &obj, seg32(), Some(&store));
        assert!(v[..4096].iter().all(|&x| x == 0.0));
        assert!(store.miss_count() > 0);
    }

    #[test]
    fn visual_store_parses_jsonl() {
        let feat: Vec<f64> = vec![0.5; 4096];
        let line = serde_json::json!({
            "video": "v0", "frame": 16, "bbox": [1.0, 2.0, 3.0, 4.0], "feat": feat
        });
        let text = format!("{line}\n");
        let store = VisualFeatureStore::parse(text.as_bytes()).unwrap();
        assert_eq!(store.lookup("v0", 16, &bb(1.0, 2.0, 3.0, 4.0))[0], 0.5);
        assert!(VisualFeatureStore::parse(b"{not json}".as_slice()).is_err());
    }

    #[test]
    fn hashed_table_is_deterministic() {
        let cats = vec!["dog".to_string(), "cat".to_string()];
        let a = CategoryEmbeddingTable::hashed(&cats);
        let b = CategoryEmbeddingTable::hashed(&cats);
        assert_eq!(a.get("dog").unwrap(), b.get("dog").unwrap());
        assert_ne!(a.get("dog").unwrap(), a.get("cat").unwrap());
    }
}
