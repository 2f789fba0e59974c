use super::{io_err, ExperimentConfig, ExperimentError, VariantRegistry};
use crate::augment::{build_noise_eval_set, NoisePool, TransformContext};
use crate::dataio::{load_case_frames, load_manifest, split_cases, CaseRecord, ClipSample, Label};
use crate::model::Model;
use crate::numeric::gradcheck::{run_suite, OpCheck};
use crate::synth::write_dataset;
use crate::train::{
    codes_csv, confusion_metrics, epoch_csv, evaluate_cases, export_code_distribution, load_checkpoint, metrics_csv,
    noise_metrics_csv, restore, save_checkpoint, CaseEvaluation, CodeDistribution, EpochStats, MetricsReport, Trainer,
};
use rayon::prelude::*;
use std::path::Path;

/// Preprocessed clips of both split halves plus the noise pool, if present.
pub struct Dataset {
    pub train: Vec<ClipSample>,
    pub val: Vec<ClipSample>,
    pub train_cases: Vec<(String, Label)>,
    pub val_cases: Vec<(String, Label)>,
    pub noise_pool: Option<NoisePool>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub stats: Vec<EpochStats>,
}

pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub evaluation: CaseEvaluation,
}

pub struct NoiseOutcome {
    pub clean: MetricsReport,
    pub noisy: MetricsReport,
    pub augmented_clips: usize,
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn run_synth(cfg: &ExperimentConfig) -> Result<usize, ExperimentError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.data_dir).map_err(io_err(&cfg.data_dir))?;
    Ok(write_dataset(&cfg.synth_spec(), &cfg.data_dir)?.len())
}

fn clips_of(cases: &[CaseRecord], cfg: &ExperimentConfig) -> Result<Vec<ClipSample>, ExperimentError> {
    let sampling = cfg.sampling();
    let per_case = cases
        .par_iter()
        .map(|c| Ok(ClipSample::assemble(c, &load_case_frames(c, &sampling)?, &sampling)))
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Dataset, ExperimentError> {
    cfg.validate()?;
    let cases = load_manifest(&cfg.data_dir.join("manifest.json"))?;
    let split = split_cases(&cases, cfg.split_ratio, cfg.seed)?;
    let ids = |cs: &[CaseRecord]| cs.iter().map(|c| (c.case_id.clone(), c.label)).collect::<Vec<_>>();
    let noise_dir = cfg.data_dir.join("noise");
    let noise_pool = if noise_dir.is_dir() {
        Some(NoisePool::load(&noise_dir, &cfg.sampling())?)
    } else {
        None
    };
    Ok(Dataset {
        train: clips_of(&split.train, cfg)?,
        val: clips_of(&split.val, cfg)?,
        train_cases: ids(&split.train),
        val_cases: ids(&split.val),
        noise_pool,
    })
}

/// Fresh model for the configured variant.
pub fn init_model(cfg: &ExperimentConfig) -> Result<Model<f32>, ExperimentError> {
    let registry = VariantRegistry::default();
    let variant = registry.get(&cfg.model)?;
    let mut net = cfg.network();
    let mut swav = cfg.swav();
    variant.configure(&mut net, &mut swav);
    Ok(Model::init(&net, &swav, cfg.seed)?)
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<Model<f32>, ExperimentError> {
    let path = cfg.checkpoint_path();
    if !path.is_file() {
        return Err(ExperimentError::MissingCheckpoint(path));
    }
    let mut model = init_model(cfg)?;
    restore(&mut model.store, &load_checkpoint(&path)?)?;
    Ok(model)
}

/// Trains from scratch on `data` without touching the filesystem.
pub fn train_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainOutcome, ExperimentError> {
    let mut model = init_model(cfg)?;
    let ctx = TransformContext {
        noise_pool: data.noise_pool.as_ref(),
    };
    let trainer = Trainer::new(cfg.train(), model.head.cfg.k_views, ctx)?;
    let stats = (0..cfg.epochs)
        .map(|e| trainer.train_epoch(&mut model, &data.train, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainOutcome { model, stats })
}

pub fn evaluate_on(model: &Model<f32>, cases: &[(String, Label)], clips: &[ClipSample]) -> Result<EvalOutcome, ExperimentError> {
    let evaluation = evaluate_cases(model, cases, clips)?;
    Ok(EvalOutcome {
        metrics: confusion_metrics(&evaluation.scores),
        evaluation,
    })
}

pub fn noise_eval_on(cfg: &ExperimentConfig, model: &Model<f32>, data: &Dataset) -> Result<NoiseOutcome, ExperimentError> {
    let pool = data
        .noise_pool
        .as_ref()
        .ok_or_else(|| ExperimentError::Config(format!("no noise pool under {}", cfg.data_dir.display())))?;
    let noisy = build_noise_eval_set(&data.val, pool, cfg.noise_eval_fraction, cfg.seed)?;
    Ok(NoiseOutcome {
        clean: evaluate_on(model, &data.val_cases, &data.val)?.metrics,
        noisy: evaluate_on(model, &data.val_cases, &noisy.clips)?.metrics,
        augmented_clips: noisy.augmented.iter().filter(|&&a| a).count(),
    })
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, ExperimentError> {
    let data = prepare_data(cfg)?;
    let out = train_on(cfg, &data)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    save_checkpoint(&out.model.store, &cfg.checkpoint_path())?;
    write(&cfg.output(&format!("epochs_{}.csv", cfg.model)), &epoch_csv(&out.stats))?;
    Ok(out)
}

pub fn run_eval(cfg: &ExperimentConfig) -> Result<EvalOutcome, ExperimentError> {
    let model = load_model(cfg)?;
    let data = prepare_data(cfg)?;
    let out = evaluate_on(&model, &data.val_cases, &data.val)?;
    write(
        &cfg.output(&format!("metrics_{}.csv", cfg.model)),
        &metrics_csv(&[(cfg.model.clone(), out.metrics.clone())]),
    )?;
    Ok(out)
}

pub fn run_noise_eval(cfg: &ExperimentConfig) -> Result<NoiseOutcome, ExperimentError> {
    let model = load_model(cfg)?;
    let data = prepare_data(cfg)?;
    let out = noise_eval_on(cfg, &model, &data)?;
    write(
        &cfg.output(&format!("noise_metrics_{}.csv", cfg.model)),
        &noise_metrics_csv(&[(cfg.model.clone(), out.clean.clone(), out.noisy.clone())]),
    )?;
    Ok(out)
}

pub fn run_export_codes(cfg: &ExperimentConfig) -> Result<CodeDistribution, ExperimentError> {
    let model = load_model(cfg)?;
    let data = prepare_data(cfg)?;
    let dist = export_code_distribution(&model, &data.val)?;
    write(&cfg.output(&format!("codes_{}.csv", cfg.model)), &codes_csv(&dist))?;
    Ok(dist)
}

pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<OpCheck>, ExperimentError> {
    Ok(run_suite(cfg.seed, cfg.gradcheck_cases)?)
}
