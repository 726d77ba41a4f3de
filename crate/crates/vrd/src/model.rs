//! Relation predictor: one affine+ReLU encoder per feature family, a fusion
//! trunk, and two single-label softmax heads (spatial and action) trained
//! with focal loss under Adam.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VrdError};
use crate::features::{PairFeature, LANGUAGE_DIM, MASK_DIM, MOTION_DIM, VISUAL_DIM};
use crate::geometry::BoxedTrack;
use crate::segment::Segment;

/// One spatial and one action label per sample; class 0 of each head is the
/// explicit "no relation" class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub spatial: usize,
    pub action: usize,
}

/// Network shape. Class counts exclude the none class; predicate names give
/// ids 1..=N in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub spatial_classes: Vec<String>,
    pub action_classes: Vec<String>,
    pub language_dim: usize,
    pub motion_dim: usize,
    pub mask_dim: usize,
    pub visual_dim: usize,
    pub language_width: usize,
    pub motion_width: usize,
    pub mask_width: usize,
    pub visual_width: usize,
    pub trunk_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            spatial_classes: Vec::new(),
            action_classes: Vec::new(),
            language_dim: LANGUAGE_DIM,
            motion_dim: MOTION_DIM,
            mask_dim: MASK_DIM,
            visual_dim: VISUAL_DIM,
            language_width: 128,
            motion_width: 128,
            mask_width: 128,
            visual_width: 256,
            trunk_width: 256,
        }
    }
}

impl ModelConfig {
    pub fn spatial_count(&self) -> usize {
        self.spatial_classes.len() + 1
    }

    pub fn action_count(&self) -> usize {
        self.action_classes.len() + 1
    }

    pub fn trunk_input(&self) -> usize {
        self.language_width + self.motion_width + self.mask_width + self.visual_width
    }

    /// Predicate name for a non-none class id of the given head.
    pub fn predicate_name(&self, head: Head, class: usize) -> &str {
        match head {
            Head::Spatial => &self.spatial_classes[class - 1],
            Head::Action => &self.action_classes[class - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Spatial,
    Action,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)`, with `p_t` clamped to 1e-12.
pub fn focal_loss(probs: &[f64], target: usize, cfg: &FocalLossConfig) -> f64 {
    let p = probs[target].max(1e-12);
    -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    w: Array2<f64>, // out x in
    b: Array1<f64>,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let w = Array2::from_shape_fn((output, input), |_| rng.gen_range(-bound..bound));
        Dense {
            w,
            b: Array1::zeros(output),
        }
    }

    /// `x (batch x in) -> batch x out`. An all-zero input block short-circuits
    /// to the broadcast bias (the stubbed visual branch hits this path).
    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        if x.iter().all(|&v| v == 0.0) {
            let mut out = Array2::zeros((x.nrows(), self.b.len()));
            out += &self.b;
            out
        } else {
            x.dot(&self.w.t()) + &self.b
        }
    }

    /// Accumulates gradients; returns dL/dx unless `need_dx` is false.
    fn backward(
        &self,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        grad: &mut DenseGrad,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        if x.iter().any(|&v| v != 0.0) {
            grad.w += &dy.t().dot(x);
        }
        grad.b += &dy.sum_axis(Axis(0));
        if need_dx {
            Some(dy.dot(&self.w))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
struct DenseGrad {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl DenseGrad {
    fn zeros_like(d: &Dense) -> Self {
        DenseGrad {
            w: Array2::zeros(d.w.dim()),
            b: Array1::zeros(d.b.len()),
        }
    }
}

const LANG: usize = 0;
const MOTION: usize = 1;
const MASK: usize = 2;
const VISUAL: usize = 3;
const TRUNK: usize = 4;
const HEAD_SPATIAL: usize = 5;
const HEAD_ACTION: usize = 6;
const LAYER_COUNT: usize = 7;

/// All weights of the relation predictor plus the shape/vocabulary config
/// and the seed they were initialized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    layers: Vec<Dense>,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Dense::init(&mut rng, config.language_dim, config.language_width),
            Dense::init(&mut rng, config.motion_dim, config.motion_width),
            Dense::init(&mut rng, config.mask_dim, config.mask_width),
            Dense::init(&mut rng, config.visual_dim, config.visual_width),
            Dense::init(&mut rng, config.trunk_input(), config.trunk_width),
            Dense::init(&mut rng, config.trunk_width, config.spatial_count()),
            Dense::init(&mut rng, config.trunk_width, config.action_count()),
        ];
        ModelParams {
            config,
            seed,
            layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(text)
            .map_err(|e| VrdError::Invalid(format!("checkpoint: {e}")))?;
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expected = [
            (c.language_width, c.language_dim),
            (c.motion_width, c.motion_dim),
            (c.mask_width, c.mask_dim),
            (c.visual_width, c.visual_dim),
            (c.trunk_width, c.trunk_input()),
            (c.spatial_count(), c.trunk_width),
            (c.action_count(), c.trunk_width),
        ];
        if self.layers.len() != LAYER_COUNT {
            return Err(VrdError::Config(format!(
                "checkpoint has {} layers, expected {LAYER_COUNT}",
                self.layers.len()
            )));
        }
        for (i, (layer, exp)) in self.layers.iter().zip(expected).enumerate() {
            if layer.w.dim() != exp || layer.b.len() != exp.0 {
                return Err(VrdError::Config(format!(
                    "layer {i} has shape {:?}, config requires {exp:?}",
                    layer.w.dim()
                )));
            }
        }
        Ok(())
    }

    /// All parameters as one flat vector (tests use this for finite
    /// differences).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = *it.next().expect("flat length");
            }
            for v in l.b.iter_mut() {
                *v = *it.next().expect("flat length");
            }
        }
        assert!(it.next().is_none(), "flat length mismatch");
    }
}

fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Feature block of a whole batch, one matrix per family.
pub struct BatchInput {
    pub language: Array2<f64>,
    pub motion: Array2<f64>,
    pub mask: Array2<f64>,
    pub visual: Array2<f64>,
}

impl BatchInput {
    pub fn from_features<'a>(feats: impl Iterator<Item = &'a PairFeature> + Clone) -> Self {
        let n = feats.clone().count();
        // Row widths come from the features themselves so reduced-dimension
        // configurations work; an empty batch gets zero-width matrices.
        let collect = |pick: &dyn Fn(&PairFeature) -> Vec<f64>| {
            let dim = feats.clone().next().map_or(0, |f| pick(f).len());
            let mut m = Array2::zeros((n, dim));
            for (i, f) in feats.clone().enumerate() {
                m.row_mut(i).assign(&Array1::from_vec(pick(f)));
            }
            m
        };
        BatchInput {
            language: collect(&|f| f.language.clone()),
            motion: collect(&|f| f.motion.clone()),
            mask: collect(&|f| f.mask.iter().map(|&v| v as f64).collect()),
            visual: collect(&|f| f.visual.clone()),
        }
    }

    fn len(&self) -> usize {
        self.language.nrows()
    }
}

struct ForwardCache {
    branch_pre: [Array2<f64>; 4],
    branch_act: [Array2<f64>; 4],
    fused: Array2<f64>,
    trunk_act: Array2<f64>,
    spatial_probs: Array2<f64>,
    action_probs: Array2<f64>,
}

fn forward_cached(params: &ModelParams, batch: &BatchInput) -> ForwardCache {
    let inputs = [&batch.language, &batch.motion, &batch.mask, &batch.visual];
    let mut branch_pre = Vec::with_capacity(4);
    let mut branch_act = Vec::with_capacity(4);
    for (li, x) in inputs.iter().enumerate() {
        let pre = params.layers[li].forward(x);
        let mut act = pre.clone();
        relu(&mut act);
        branch_pre.push(pre);
        branch_act.push(act);
    }
    let widths: Vec<usize> = branch_act.iter().map(|a| a.ncols()).collect();
    let mut fused = Array2::zeros((batch.len(), widths.iter().sum()));
    let mut col = 0;
    for act in &branch_act {
        fused.slice_mut(s![.., col..col + act.ncols()]).assign(act);
        col += act.ncols();
    }
    let trunk_pre = params.layers[TRUNK].forward(&fused);
    let mut trunk_act = trunk_pre;
    relu(&mut trunk_act);
    let zs = params.layers[HEAD_SPATIAL].forward(&trunk_act);
    let za = params.layers[HEAD_ACTION].forward(&trunk_act);
    ForwardCache {
        branch_pre: branch_pre.try_into().unwrap(),
        branch_act: branch_act.try_into().unwrap(),
        fused,
        trunk_act,
        spatial_probs: softmax_rows(&zs),
        action_probs: softmax_rows(&za),
    }
}

/// Batch forward pass: per-sample probability rows for both heads.
pub fn forward_batch(params: &ModelParams, batch: &BatchInput) -> (Array2<f64>, Array2<f64>) {
    let cache = forward_cached(params, batch);
    (cache.spatial_probs, cache.action_probs)
}

/// Single-sample forward pass.
pub fn forward(params: &ModelParams, feat: &PairFeature) -> (Vec<f64>, Vec<f64>) {
    let batch = BatchInput::from_features(std::iter::once(feat));
    let (s, a) = forward_batch(params, &batch);
    (s.row(0).to_vec(), a.row(0).to_vec())
}

/// dL/dz for one focal-loss sample given its softmax probabilities.
fn focal_grad_wrt_logits(probs: &[f64], target: usize, cfg: &FocalLossConfig) -> Vec<f64> {
    let p = probs[target].max(1e-12);
    // L = -a (1-p)^g ln p; dL/dz_j = dL/dp * p (d_tj - p_j)
    let modulation = if cfg.gamma == 0.0 {
        0.0 // avoids 0 * inf at p = 1 when the exponent goes negative
    } else {
        cfg.gamma * p * (1.0 - p).powf(cfg.gamma - 1.0) * p.ln()
    };
    let factor = -cfg.alpha * ((1.0 - p).powf(cfg.gamma) - modulation);
    probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == target { 1.0 } else { 0.0 };
            factor * (delta - pj)
        })
        .collect()
}

struct Grads {
    layers: Vec<DenseGrad>,
}

impl Grads {
    fn zeros_like(params: &ModelParams) -> Self {
        Grads {
            layers: params.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }
}

/// Objective value and its flattened analytic gradient (same coordinate
/// order as [`ModelParams::flatten`]); used for gradient checking.
pub fn objective_and_gradient(
    params: &ModelParams,
    batch: &BatchInput,
    labels: &[LabelPair],
    cfg: &FocalLossConfig,
) -> (f64, Vec<f64>) {
    let (loss, grads) = loss_and_grads(params, batch, labels, cfg);
    (loss, grads.flatten())
}

/// Total focal loss (spatial + action, summed over the batch) and its
/// analytic gradients.
fn loss_and_grads(
    params: &ModelParams,
    batch: &BatchInput,
    labels: &[LabelPair],
    cfg: &FocalLossConfig,
) -> (f64, Grads) {
    assert_eq!(batch.len(), labels.len());
    let cache = forward_cached(params, batch);
    let mut grads = Grads::zeros_like(params);
    let n = batch.len();

    let mut loss = 0.0;
    let mut dzs = Array2::zeros((n, cache.spatial_probs.ncols()));
    let mut dza = Array2::zeros((n, cache.action_probs.ncols()));
    for i in 0..n {
        let sp: Vec<f64> = cache.spatial_probs.row(i).to_vec();
        let ap: Vec<f64> = cache.action_probs.row(i).to_vec();
        loss += focal_loss(&sp, labels[i].spatial, cfg);
        loss += focal_loss(&ap, labels[i].action, cfg);
        dzs.row_mut(i)
            .assign(&Array1::from_vec(focal_grad_wrt_logits(&sp, labels[i].spatial, cfg)));
        dza.row_mut(i)
            .assign(&Array1::from_vec(focal_grad_wrt_logits(&ap, labels[i].action, cfg)));
    }

    let dt_s = params.layers[HEAD_SPATIAL]
        .backward(&cache.trunk_act, &dzs, &mut grads.layers[HEAD_SPATIAL], true)
        .unwrap();
    let dt_a = params.layers[HEAD_ACTION]
        .backward(&cache.trunk_act, &dza, &mut grads.layers[HEAD_ACTION], true)
        .unwrap();
    let mut dtrunk = dt_s + dt_a;
    // relu'
    ndarray::Zip::from(&mut dtrunk)
        .and(&cache.trunk_act)
        .for_each(|d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
    let dfused = params.layers[TRUNK]
        .backward(&cache.fused, &dtrunk, &mut grads.layers[TRUNK], true)
        .unwrap();

    let inputs = [&batch.language, &batch.motion, &batch.mask, &batch.visual];
    let mut col = 0;
    for li in [LANG, MOTION, MASK, VISUAL] {
        let width = cache.branch_act[li].ncols();
        let mut dbranch = dfused.slice(s![.., col..col + width]).to_owned();
        ndarray::Zip::from(&mut dbranch)
            .and(&cache.branch_pre[li])
            .for_each(|d, &pre| {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            });
        params.layers[li].backward(inputs[li], &dbranch, &mut grads.layers[li], false);
        col += width;
    }
    (loss, grads)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub focal: FocalLossConfig,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            focal: FocalLossConfig::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSample {
    pub feature: PairFeature2,
    pub label: LabelPair,
}

/// Serializable flat feature record (masks stored as bytes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairFeature2 {
    pub motion: Vec<f64>,
    pub mask: Vec<u8>,
    pub language: Vec<f64>,
    pub visual: Vec<f64>,
}

impl From<PairFeature> for PairFeature2 {
    fn from(f: PairFeature) -> Self {
        PairFeature2 {
            motion: f.motion,
            mask: f.mask,
            language: f.language,
            visual: f.visual,
        }
    }
}

impl From<&PairFeature2> for PairFeature {
    fn from(f: &PairFeature2) -> Self {
        PairFeature {
            motion: f.motion.clone(),
            mask: f.mask.clone(),
            language: f.language.clone(),
            visual: f.visual.clone(),
        }
    }
}

struct Adam {
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
    step: usize,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        Adam {
            m: params.layers.iter().map(DenseGrad::zeros_like).collect(),
            v: params.layers.iter().map(DenseGrad::zeros_like).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &Grads, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let g = &grads.layers[i];
            let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            };
            for ((p, &gv), (m, v)) in layer
                .w
                .iter_mut()
                .zip(g.w.iter())
                .zip(self.m[i].w.iter_mut().zip(self.v[i].w.iter_mut()))
            {
                apply(p, gv, m, v);
            }
            for ((p, &gv), (m, v)) in layer
                .b
                .iter_mut()
                .zip(g.b.iter())
                .zip(self.m[i].b.iter_mut().zip(self.v[i].b.iter_mut()))
            {
                apply(p, gv, m, v);
            }
        }
    }
}

/// Trains from a seeded initialization; fully deterministic for a given
/// config and dataset order. Returns the final params and the per-epoch
/// mean-loss trace.
pub fn train(
    dataset: &[TrainSample],
    config: ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(VrdError::EmptyDataset);
    }
    let mut params = ModelParams::init(config, cfg.seed);
    let mut adam = Adam::new(&params);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let feats: Vec<PairFeature> = dataset.iter().map(|s| (&s.feature).into()).collect();

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = BatchInput::from_features(chunk.iter().map(|&i| &feats[i]));
            let labels: Vec<LabelPair> = chunk.iter().map(|&i| dataset[i].label).collect();
            let (loss, grads) = loss_and_grads(&params, &batch, &labels, &cfg.focal);
            epoch_loss += loss;
            adam.update(&mut params, &grads, cfg);
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }
    Ok((params, trace))
}

/// Grounded relation detection for one pair within one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub subject: BoxedTrack,
    pub object: BoxedTrack,
    /// (subject category, predicate, object category)
    pub triplet: (String, String, String),
    pub score: f64,
    /// Half-open frame span.
    pub span: (usize, usize),
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    /// Max predicates emitted per head per pair.
    pub top_k: usize,
    pub min_prob: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            top_k: 3,
            min_prob: 0.05,
        }
    }
}

/// Runs the network on one pair and emits up to `top_k` non-none predicates
/// per head with probability >= `min_prob`. Instance score is
/// subject confidence x object confidence x predicate probability; the span
/// is the trajectory intersection inside the segment.
pub fn predict_pair(
    params: &ModelParams,
    sub: &BoxedTrack,
    obj: &BoxedTrack,
    seg: Segment,
    feat: &PairFeature,
    cfg: &PredictConfig,
) -> Vec<RelationInstance> {
    let (sp, ap) = forward(params, feat);
    let (sb, se) = sub.span();
    let (ob, oe) = obj.span();
    let begin = sb.max(ob).max(seg.begin);
    let end = se.min(oe).min(seg.end);
    if begin >= end {
        return Vec::new();
    }
    let sub_clip = sub.clip(begin, end).expect("non-empty span");
    let obj_clip = obj.clip(begin, end).expect("non-empty span");

    let mut out = Vec::new();
    for (head, probs) in [(Head::Spatial, &sp), (Head::Action, &ap)] {
        // non-none classes by probability, descending; index tie-break keeps
        // output deterministic
        let mut ranked: Vec<(usize, f64)> = probs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &p)| (i, p))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(class, p) in ranked.iter().take(cfg.top_k) {
            if p < cfg.min_prob {
                break;
            }
            out.push(RelationInstance {
                subject: sub_clip.clone(),
                object: obj_clip.clone(),
                triplet: (
                    sub.category.clone(),
                    params.config.predicate_name(head, class).to_string(),
                    obj.category.clone(),
                ),
                score: sub.confidence * obj.confidence * p,
                span: (begin, end),
                segment: seg,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            spatial_classes: vec!["left_of".into(), "right_of".into()],
            action_classes: vec!["towards".into()],
            language_dim: 6,
            motion_dim: 5,
            mask_dim: 8,
            visual_dim: 4,
            language_width: 7,
            motion_width: 6,
            mask_width: 5,
            visual_width: 4,
            trunk_width: 9,
        }
    }

    fn tiny_feature(rng: &mut ChaCha8Rng) -> PairFeature {
        PairFeature {
            motion: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            mask: (0..8).map(|_| rng.gen_range(0..2u8)).collect(),
            language: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            visual: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_params_give_uniform_heads() {
        let mut params = ModelParams::init(tiny_config(), 3);
        let zeros = vec![0.0; params.flatten().len()];
        params.set_flat(&zeros);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, a) = forward(&params, &tiny_feature(&mut rng));
        assert_eq!(s.len(), 3);
        assert_eq!(a.len(), 2);
        for p in &s {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        for p in &a {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn head_probs_sum_to_one() {
        let params = ModelParams::init(tiny_config(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (s, a) = forward(&params, &tiny_feature(&mut rng));
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn focal_loss_values() {
        let ce = FocalLossConfig {
            gamma: 0.0,
            alpha: 1.0,
        };
        let probs = vec![0.1, 0.9];
        assert!((focal_loss(&probs, 1, &ce) - (-(0.9f64).ln())).abs() < 1e-12);
        let cfg = FocalLossConfig::default();
        let expect = 0.25 * 0.01 * -(0.9f64).ln();
        assert!((focal_loss(&probs, 1, &cfg) - expect).abs() < 1e-12);
        assert!((expect - 2.634e-4).abs() < 1e-6);
        // p_t -> 1 drives the loss to 0; p_t = 0 is clamped, not infinite
        assert!(focal_loss(&[0.0, 1.0], 1, &cfg).abs() < 1e-12);
        assert!(focal_loss(&[1.0, 0.0], 1, &cfg).is_finite());
    }

    #[test]
    fn focal_loss_monotone_in_pt() {
        let cfg = FocalLossConfig::default();
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let l = focal_loss(&[1.0 - p, p], 1, &cfg);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let feats: Vec<PairFeature> = (0..5).map(|_| tiny_feature(&mut rng)).collect();
        let labels: Vec<LabelPair> = (0..5)
            .map(|_| LabelPair {
                spatial: rng.gen_range(0..3),
                action: rng.gen_range(0..2),
            })
            .collect();
        let batch = BatchInput::from_features(feats.iter());
        let cfg = FocalLossConfig::default();

        let params = ModelParams::init(config.clone(), 17);
        let (_, grads) = loss_and_grads(&params, &batch, &labels, &cfg);
        let analytic = grads.flatten();
        let flat = params.flatten();
        let eps = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let i = rng.gen_range(0..flat.len());
            let mut plus = params.clone();
            let mut vals = flat.clone();
            vals[i] += eps;
            plus.set_flat(&vals);
            let (lp, _) = loss_and_grads(&plus, &batch, &labels, &cfg);
            let mut minus = params.clone();
            vals[i] = flat[i] - eps;
            minus.set_flat(&vals);
            let (lm, _) = loss_and_grads(&minus, &batch, &labels, &cfg);
            let numeric = (lp - lm) / (2.0 * eps);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (numeric - analytic[i]).abs() / denom < 1e-4,
                "param {i}: analytic {} vs numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn forward_is_permutation_covariant_over_head_classes() {
        let config = tiny_config();
        let params = ModelParams::init(config, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feat = tiny_feature(&mut rng);
        let (s, _) = forward(&params, &feat);

        // swap rows 1 and 2 of the spatial head
        let mut swapped = params.clone();
        let head = &mut swapped.layers[HEAD_SPATIAL];
        let r1 = head.w.row(1).to_owned();
        let r2 = head.w.row(2).to_owned();
        head.w.row_mut(1).assign(&r2);
        head.w.row_mut(2).assign(&r1);
        head.b.swap(1, 2);
        let (s2, _) = forward(&swapped, &feat);
        assert!((s[0] - s2[0]).abs() < 1e-12);
        assert!((s[1] - s2[2]).abs() < 1e-12);
        assert!((s[2] - s2[1]).abs() < 1e-12);
    }

    fn tiny_dataset(n: usize) -> Vec<TrainSample> {
        // separable: spatial label follows the sign of motion[0], action
        // label the sign of motion[1]
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| {
                let m0: f64 = rng.gen_range(-1.0..1.0);
                let m1: f64 = rng.gen_range(-1.0..1.0);
                let feature = PairFeature2 {
                    motion: vec![m0, m1, 0.0, 0.0, 0.0],
                    mask: vec![0; 8],
                    language: vec![0.0; 6],
                    visual: vec![0.0; 4],
                };
                TrainSample {
                    feature,
                    label: LabelPair {
                        spatial: if m0 > 0.0 { 1 } else { 2 },
                        action: if m1 > 0.0 { 1 } else { 0 },
                    },
                }
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_zero_epochs_is_identity() {
        let data = tiny_dataset(64);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (p0, trace) = train(&data, tiny_config(), &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(p0, ModelParams::init(tiny_config(), cfg.seed));

        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let (a, ta) = train(&data, tiny_config(), &cfg).unwrap();
        let (b, tb) = train(&data, tiny_config(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(train(&[], tiny_config(), &cfg).is_err());
    }

    #[test]
    fn training_fits_separable_toy_data() {
        let data = tiny_dataset(256);
        let cfg = TrainConfig {
            epochs: 150,
            seed: 1,
            ..Default::default()
        };
        let (params, trace) = train(&data, tiny_config(), &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        let mut correct = 0;
        for s in &data {
            let (sp, ap) = forward(&params, &(&s.feature).into());
            let s_hat = sp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let a_hat = ap
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            if s_hat == s.label.spatial && a_hat == s.label.action {
                correct += 1;
            }
        }
        assert!(correct as f64 / data.len() as f64 > 0.9, "{correct}/256");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = ModelParams::init(tiny_config(), 42);
        let json = params.to_json();
        let back = ModelParams::from_json(&json).unwrap();
        assert_eq!(params, back);
        assert!(ModelParams::from_json("{\"broken\":").is_err());
    }

    #[test]
    fn predict_pair_scores_and_none_class() {
        let config = tiny_config();
        let mut params = ModelParams::init(config, 3);
        let zeros = vec![0.0; params.flatten().len()];
        params.set_flat(&zeros);
        let seg = Segment { begin: 0, end: 32 };
        let sub = BoxedTrack::from_boxes("a", 0, vec![BBox::new(0.0, 0.0, 5.0, 5.0); 32], 0.9);
        let obj = BoxedTrack::from_boxes("b", 0, vec![BBox::new(9.0, 0.0, 5.0, 5.0); 32], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feat = tiny_feature(&mut rng);

        // uniform probs (1/3, 1/2) with min_prob above them -> nothing
        let none = predict_pair(&params, &sub, &obj, seg, &feat, &PredictConfig {
            top_k: 3,
            min_prob: 0.6,
        });
        assert!(none.is_empty());

        // force spatial class 1 to probability ~0.8 via its head bias
        let trained = {
            let mut p = params.clone();
            p.layers[HEAD_SPATIAL].b[1] = (0.8f64 / 0.1).ln();
            p.layers[HEAD_SPATIAL].b[0] = 0.0;
            p.layers[HEAD_SPATIAL].b[2] = 0.0;
            p
        };
        let (sp, _) = forward(&trained, &feat);
        assert!((sp[1] - 0.8).abs() < 1e-9);
        let out = predict_pair(&trained, &sub, &obj, seg, &feat, &PredictConfig {
            top_k: 1,
            min_prob: 0.05,
        });
        let inst = out
            .iter()
            .find(|i| i.triplet.1 == "left_of")
            .expect("spatial prediction");
        assert!((inst.score - 0.9 * 0.5 * 0.8).abs() < 1e-9);
        // the none class is never emitted even where it is the argmax
        assert!(out.iter().all(|i| i.triplet.1 != "none"));
    }
}
