use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use vrd::error::{Result, VrdError};
use vrd::eval::evaluate;
use vrd::features::{CategoryEmbeddingTable, VisualFeatureStore};
use vrd::formats::{
    predictions_by_video, write_json, DetectionFile, GroundTruthFile, PipelineConfig,
    PredictionFile,
};
use vrd::geometry::BoxedTrack;
use vrd::merge::VideoRelationInstance;
use vrd::model::{train, ModelParams, TrainSample};
use vrd::pipeline::{build_training_set, gt_categories, run_pipeline, track_video};
use vrd::synth::{generate_scene, SynthConfig};

#[derive(Parser)]
#[command(name = "vrd", about = "Video relation detection pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Pipeline configuration file (JSON); defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-video parallelism (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Disable the cross-frame linking mechanism.
    #[arg(long, global = true)]
    no_cflm: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: detections plus ground truth.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Scene description (JSON SynthConfig).
        #[arg(long)]
        scene: PathBuf,
        /// Override the scene seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_detections: PathBuf,
        #[arg(long)]
        out_gt: PathBuf,
    },
    /// Whole-video trajectory extraction.
    Track {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build labeled training samples from ground truth.
    Featurize {
        #[command(flatten)]
        common: CommonOpts,
        /// Ground-truth files; repeatable.
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Category embedding table (JSON map); hashed fallback if omitted.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Visual feature store (JSON lines); zero vectors if omitted.
        #[arg(long)]
        visual_store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the relation predictor on featurized samples.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict video-level relations for one detection file.
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        visual_store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict (and optionally evaluate) a batch of videos.
    Pipeline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, required = true)]
        detections: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        visual_store: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorRecord {
    error: String,
    code: i32,
}

#[derive(Serialize, serde::Deserialize)]
struct TracksFile {
    video: String,
    tracks: Vec<BoxedTrack>,
}

fn load_config(common: &CommonOpts) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if common.no_cflm {
        cfg.link.cflm = false;
    }
    eprintln!(
        "config: iou_threshold={} max_gap={} cflm={} segment={}x{} workers={}",
        cfg.link.iou_threshold,
        cfg.link.max_gap,
        cfg.link.cflm,
        cfg.segment.segment_length,
        cfg.segment.stride,
        cfg.workers
    );
    Ok(cfg)
}

fn thread_pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| VrdError::Config(format!("thread pool: {e}")))
}

fn load_embeddings(
    path: &Option<PathBuf>,
    categories: &[String],
) -> Result<CategoryEmbeddingTable> {
    match path {
        Some(p) => CategoryEmbeddingTable::load(p),
        None => Ok(CategoryEmbeddingTable::hashed(categories)),
    }
}

fn load_store(path: &Option<PathBuf>) -> Result<Option<VisualFeatureStore>> {
    match path {
        Some(p) => Ok(Some(VisualFeatureStore::load(p)?)),
        None => Ok(None),
    }
}

fn det_categories(det: &DetectionFile) -> Vec<String> {
    let mut set = std::collections::BTreeSet::new();
    for f in &det.frames {
        for d in &f.detections {
            set.insert(d.category.clone());
        }
    }
    set.into_iter().collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            scene,
            seed,
            out_detections,
            out_gt,
        } => {
            let _ = load_config(&common)?;
            let text = std::fs::read_to_string(&scene)
                .map_err(|e| VrdError::Config(format!("cannot read {}: {e}", scene.display())))?;
            let mut synth_cfg: SynthConfig = serde_json::from_str(&text)
                .map_err(|e| VrdError::Config(format!("scene config: {e}")))?;
            if let Some(s) = seed {
                synth_cfg.seed = s;
            }
            let (det, gt) = generate_scene(&synth_cfg)?;
            write_json(&out_detections, &det)?;
            write_json(&out_gt, &gt)?;
            Ok(())
        }
        Command::Track {
            common,
            detections,
            out,
        } => {
            let cfg = load_config(&common)?;
            let det = DetectionFile::load(&detections)?;
            let tracks = track_video(&det, &cfg);
            write_json(
                &out,
                &TracksFile {
                    video: det.video.clone(),
                    tracks,
                },
            )
        }
        Command::Featurize {
            common,
            gt,
            embeddings,
            visual_store,
            out,
        } => {
            let cfg = load_config(&common)?;
            let cfg = with_synth_vocab(cfg);
            let gts = gt
                .iter()
                .map(|p| GroundTruthFile::load(p))
                .collect::<Result<Vec<_>>>()?;
            let table = load_embeddings(&embeddings, &gt_categories(&gts))?;
            let store = load_store(&visual_store)?;
            let mut samples: Vec<TrainSample> = Vec::new();
            for g in &gts {
                samples.extend(build_training_set(g, &table, store.as_ref(), &cfg)?);
            }
            write_json(&out, &samples)
        }
        Command::Train {
            common,
            samples,
            out,
            seed,
        } => {
            let cfg = load_config(&common)?;
            let cfg = with_synth_vocab(cfg);
            let text =
                std::fs::read_to_string(&samples).map_err(|e| VrdError::io(&samples, e))?;
            let data: Vec<TrainSample> = serde_json::from_str(&text)
                .map_err(|e| VrdError::Invalid(format!("samples file: {e}")))?;
            let mut tc = cfg.train.clone();
            if let Some(s) = seed {
                tc.seed = s;
            }
            let (params, trace) = train(&data, cfg.model.clone(), &tc)?;
            eprintln!("trained {} epochs, final loss {:.6}", trace.len(), trace.last().unwrap_or(&0.0));
            std::fs::write(&out, params.to_json()).map_err(|e| VrdError::io(&out, e))
        }
        Command::Predict {
            common,
            detections,
            checkpoint,
            embeddings,
            visual_store,
            out,
        } => {
            let cfg = load_config(&common)?;
            let det = DetectionFile::load(&detections)?;
            let params = load_checkpoint(&checkpoint)?;
            let table = load_embeddings(&embeddings, &det_categories(&det))?;
            let store = load_store(&visual_store)?;
            let insts = run_pipeline(&det, &params, &table, store.as_ref(), &cfg)?;
            write_json(&out, &PredictionFile::from_instances(&det.video, &insts))
        }
        Command::Evaluate {
            common,
            predictions,
            gt,
            out,
        } => {
            let cfg = load_config(&common)?;
            let pred_files = predictions
                .iter()
                .map(|p| PredictionFile::load(p))
                .collect::<Result<Vec<_>>>()?;
            let gts = gt
                .iter()
                .map(|p| GroundTruthFile::load(p))
                .collect::<Result<Vec<_>>>()?;
            let preds = predictions_by_video(&pred_files);
            let gt_map: BTreeMap<String, Vec<VideoRelationInstance>> = gts
                .iter()
                .map(|g| (g.video.clone(), g.to_relation_instances()))
                .collect();
            let report = evaluate(&preds, &gt_map, &cfg.eval);
            for (name, value) in &report.metrics {
                println!("{name}: {value:.4}");
            }
            write_json(&out, &report)
        }
        Command::Pipeline {
            common,
            detections,
            checkpoint,
            gt,
            embeddings,
            visual_store,
            out_dir,
        } => {
            let cfg = load_config(&common)?;
            let dets = detections
                .iter()
                .map(|p| DetectionFile::load(p))
                .collect::<Result<Vec<_>>>()?;
            let params = load_checkpoint(&checkpoint)?;
            let mut cats: Vec<String> = dets.iter().flat_map(|d| det_categories(d)).collect();
            cats.sort();
            cats.dedup();
            let table = load_embeddings(&embeddings, &cats)?;
            let store = load_store(&visual_store)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| VrdError::io(&out_dir, e))?;

            let pool = thread_pool(&cfg)?;
            let results: Vec<Result<PredictionFile>> = pool.install(|| {
                dets.par_iter()
                    .map(|det| {
                        let insts = run_pipeline(det, &params, &table, store.as_ref(), &cfg)?;
                        Ok(PredictionFile::from_instances(&det.video, &insts))
                    })
                    .collect()
            });
            let mut pred_files = Vec::new();
            for r in results {
                pred_files.push(r?);
            }
            for pf in &pred_files {
                write_json(&out_dir.join(format!("{}.predictions.json", pf.video)), pf)?;
            }
            if !gt.is_empty() {
                let gts = gt
                    .iter()
                    .map(|p| GroundTruthFile::load(p))
                    .collect::<Result<Vec<_>>>()?;
                let preds = predictions_by_video(&pred_files);
                let gt_map: BTreeMap<String, Vec<VideoRelationInstance>> = gts
                    .iter()
                    .map(|g| (g.video.clone(), g.to_relation_instances()))
                    .collect();
                let report = evaluate(&preds, &gt_map, &cfg.eval);
                for (name, value) in &report.metrics {
                    println!("{name}: {value:.4}");
                }
                write_json(&out_dir.join("report.json"), &report)?;
            }
            Ok(())
        }
    }
}

/// Fills empty predicate vocabularies with the synthetic-scene defaults so
/// the synth workflow runs without a config file.
fn with_synth_vocab(mut cfg: PipelineConfig) -> PipelineConfig {
    if cfg.model.spatial_classes.is_empty() {
        cfg.model.spatial_classes = vrd::synth::SPATIAL_PREDICATES
            .iter()
            .map(|s| s.to_string())
            .collect();
    }
    if cfg.model.action_classes.is_empty() {
        cfg.model.action_classes = vrd::synth::ACTION_PREDICATES
            .iter()
            .map(|s| s.to_string())
            .collect();
    }
    cfg
}

fn load_checkpoint(path: &PathBuf) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| VrdError::io(path, e))?;
    ModelParams::from_json(&text).map_err(|e| e.context(path.display().to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let record = ErrorRecord {
                error: e.to_string(),
                code,
            };
            eprintln!("{}", serde_json::to_string(&record).unwrap());
            ExitCode::from(code as u8)
        }
    }
}
