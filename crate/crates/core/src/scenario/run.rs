use super::report::Summary;
use super::{Observer, ScenarioConfig, ScenarioError, StageExt};
use crate::bitstream::{compatibility_report, encode_image, CompatReport, EncodedImage};
use crate::codec::{Model, ModelConfig};
use crate::data::{Image, ImageDataset};
use crate::evaluation::{bd_rate, rd_sweep, RdCurve, RdPoint};
use crate::training::{finetune, pretrain, LambdaDistribution, ReplayBuffer, Strategy, TrainLog};

/// Old test images encoded by the pre-trained model, λ-major.
#[derive(Clone, Debug)]
pub struct Archive {
    pub grid: Vec<f64>,
    pub images: Vec<Image>,
    pub streams: Vec<EncodedImage>,
}

impl Archive {
    pub fn build(model: &Model<f32>, images: Vec<Image>, grid: Vec<f64>) -> Result<Self, ScenarioError> {
        let mut streams = Vec::with_capacity(grid.len() * images.len());
        for &lambda in &grid {
            for im in &images {
                streams.push(encode_image(im, lambda, model).stage("archive")?);
            }
        }
        Ok(Archive { grid, images, streams })
    }

    /// Originals aligned with `streams`.
    pub fn originals(&self) -> Vec<Image> {
        self.grid.iter().flat_map(|_| self.images.iter().cloned()).collect()
    }

    /// Per-λ mean bpp and PSNR of one decoder column of a report.
    pub fn curve(&self, report: &CompatReport, new_decoder: bool) -> RdCurve {
        let n = self.images.len();
        let points = self
            .grid
            .iter()
            .enumerate()
            .map(|(j, &lambda)| {
                let items = &report.items[j * n..(j + 1) * n];
                let quality = items.iter().map(|i| if new_decoder { i.psnr_new } else { i.psnr_old }.unwrap_or(f64::NAN));
                RdPoint {
                    lambda,
                    bpp: items.iter().map(|i| i.bpp).sum::<f64>() / n as f64,
                    psnr: quality.sum::<f64>() / n as f64,
                }
            })
            .collect();
        RdCurve::new(points)
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub model: Model<f32>,
    pub log: TrainLog,
    pub old_train: ImageDataset,
    pub archive: Archive,
    /// Pre-trained decode of the archive.
    pub old_curve: RdCurve,
}

#[derive(Clone, Debug)]
pub struct NewData {
    pub train: ImageDataset,
    pub test: Vec<Image>,
    pub grid: Vec<f64>,
    /// Pre-trained model on the new test set over the new grid.
    pub baseline: RdCurve,
}

/// Evaluation of one fine-tuned model; the pre-trained model is reported
/// through the same type with `strategy` unset.
#[derive(Clone, Debug)]
pub struct StrategyResult {
    pub label: String,
    pub strategy: Option<Strategy>,
    pub alpha: f64,
    pub model: Model<f32>,
    pub log: TrainLog,
    pub compat: CompatReport,
    pub old_curve: RdCurve,
    pub new_curve: RdCurve,
    pub latents_equal: bool,
    pub fingerprint_kept: bool,
    pub old_bd_rate: Option<f64>,
    pub new_bd_rate: Option<f64>,
}

impl StrategyResult {
    pub fn old_psnr(&self) -> f64 {
        self.old_curve.mean_psnr()
    }

    pub fn new_psnr(&self) -> f64 {
        self.new_curve.mean_psnr()
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub pretrained: Pretrained,
    pub new_data: NewData,
    /// Pre-trained row first, then one row per fine-tuning run.
    pub results: Vec<StrategyResult>,
}

impl SeedRun {
    pub fn result(&self, label: &str) -> Option<&StrategyResult> {
        self.results.iter().find(|r| r.label == label)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

fn grid(range: [f64; 2], points: usize) -> Result<Vec<f64>, ScenarioError> {
    Ok(LambdaDistribution::new(range[0], range[1]).stage("config")?.grid(points))
}

pub fn pretrain_stage(cfg: &ScenarioConfig, seed: u64, obs: &mut dyn Observer) -> Result<Pretrained, ScenarioError> {
    obs.stage(&format!("seed {seed}: generating old data"));
    let old_train = ImageDataset::generate(&ScenarioConfig::seeded(&cfg.old_train, seed)).stage("generate data")?;
    let old_test = ImageDataset::generate(&ScenarioConfig::seeded(&cfg.old_test, seed)).stage("generate data")?.eval_images();
    obs.stage(&format!("seed {seed}: pre-training for {} iterations", cfg.pretrain_iterations));
    let mut model = Model::<f32>::new(ModelConfig { seed, ..cfg.model.clone() }).stage("pretrain")?;
    let outcome = pretrain(&cfg.pretrain_config(seed), &old_train, &mut model).stage("pretrain")?;
    obs.stage(&format!("seed {seed}: archiving old test bitstreams"));
    let archive = Archive::build(&model, old_test, grid(cfg.old_lambda, cfg.grid_points)?)?;
    let report = compatibility_report(&archive.streams, &model, &model, &archive.originals());
    if report.failures() > 0 {
        return Err(ScenarioError::new("archive", format!("{} archived streams fail to decode", report.failures())));
    }
    let old_curve = archive.curve(&report, false);
    Ok(Pretrained { model, log: outcome.log, old_train, archive, old_curve })
}

pub fn new_data_stage(cfg: &ScenarioConfig, seed: u64, pre: &Pretrained) -> Result<NewData, ScenarioError> {
    let train = ImageDataset::generate(&ScenarioConfig::seeded(&cfg.new_train, seed)).stage("generate data")?;
    let test = ImageDataset::generate(&ScenarioConfig::seeded(&cfg.new_test, seed)).stage("generate data")?.eval_images();
    let grid = grid(cfg.new_lambda, cfg.grid_points)?;
    let baseline = rd_sweep(&pre.model, &test, &grid).stage("baseline")?;
    Ok(NewData { train, test, grid, baseline })
}

/// The row of the pre-trained model itself.
pub fn pretrained_result(pre: &Pretrained, new: &NewData) -> StrategyResult {
    let compat = compatibility_report(&pre.archive.streams, &pre.model, &pre.model, &pre.archive.originals());
    StrategyResult {
        label: "pretrained".into(),
        strategy: None,
        alpha: 0.0,
        model: pre.model.clone(),
        log: pre.log.clone(),
        latents_equal: compat.all_latents_equal(),
        compat,
        old_curve: pre.old_curve.clone(),
        new_curve: new.baseline.clone(),
        fingerprint_kept: true,
        old_bd_rate: Some(0.0),
        new_bd_rate: Some(0.0),
    }
}

pub fn label_for(strategy: Strategy, alpha: f64, cfg: &ScenarioConfig) -> String {
    if strategy == Strategy::Kr && alpha != cfg.alpha {
        format!("kr_alpha{alpha}")
    } else {
        strategy.to_string()
    }
}

pub fn finetune_stage(
    cfg: &ScenarioConfig,
    seed: u64,
    pre: &Pretrained,
    new: &NewData,
    strategy: Strategy,
    alpha: f64,
    obs: &mut dyn Observer,
) -> Result<StrategyResult, ScenarioError> {
    let label = label_for(strategy, alpha, cfg);
    let stage = format!("finetune {label}");
    obs.stage(&format!("seed {seed}: fine-tuning {label} for {} iterations", cfg.finetune_iterations));
    let replay = ReplayBuffer::new(pre.model.clone(), pre.old_train.clone()).stage(&stage)?;
    let mut model = pre.model.clone();
    let outcome = finetune(&cfg.finetune_config(strategy, alpha, seed), &new.train, Some(&replay), &mut model).stage(&stage)?;

    let stage = format!("evaluate {label}");
    let compat = compatibility_report(&pre.archive.streams, &pre.model, &model, &pre.archive.originals());
    if compat.failures() > 0 {
        return Err(ScenarioError::new(stage, format!("{} archived streams fail to decode", compat.failures())));
    }
    let old_curve = pre.archive.curve(&compat, true);
    let new_curve = rd_sweep(&model, &new.test, &new.grid).stage(&stage)?;
    Ok(StrategyResult {
        label,
        strategy: Some(strategy),
        alpha,
        latents_equal: compat.all_latents_equal(),
        fingerprint_kept: model.fingerprint() == pre.model.fingerprint(),
        old_bd_rate: bd_rate(&pre.old_curve, &old_curve).ok(),
        new_bd_rate: bd_rate(&new.baseline, &new_curve).ok(),
        model,
        log: outcome.log,
        compat,
        old_curve,
        new_curve,
    })
}

/// Every fine-tuning run of one seed, in report order.
fn runs_of(cfg: &ScenarioConfig) -> Vec<(Strategy, f64)> {
    let mut runs: Vec<(Strategy, f64)> = cfg.strategies.iter().map(|&s| (s, if s == Strategy::Kr { cfg.alpha } else { 0.0 })).collect();
    for &a in &cfg.alpha_grid {
        if !runs.contains(&(Strategy::Kr, a)) {
            runs.push((Strategy::Kr, a));
        }
    }
    runs
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64, obs: &mut dyn Observer) -> Result<SeedRun, ScenarioError> {
    let pretrained = pretrain_stage(cfg, seed, obs)?;
    let new_data = new_data_stage(cfg, seed, &pretrained)?;
    let dir = format!("seed{seed}");
    emit(obs, &format!("{dir}/pretrained.ckpt"), &pretrained.model.to_checkpoint_bytes())?;
    emit(obs, &format!("{dir}/pretrained_log.csv"), pretrained.log.to_csv().as_bytes())?;
    for (k, s) in pretrained.archive.streams.iter().enumerate() {
        let n = pretrained.archive.images.len();
        emit(obs, &format!("{dir}/archive/l{}_i{:03}.ccbs", k / n, k % n), &s.to_bytes())?;
    }

    let mut results = vec![pretrained_result(&pretrained, &new_data)];
    for (strategy, alpha) in runs_of(cfg) {
        let r = finetune_stage(cfg, seed, &pretrained, &new_data, strategy, alpha, obs)?;
        emit(obs, &format!("{dir}/{}.ckpt", r.label), &r.model.to_checkpoint_bytes())?;
        emit(obs, &format!("{dir}/{}_log.csv", r.label), r.log.to_csv().as_bytes())?;
        emit(obs, &format!("{dir}/{}_compat.csv", r.label), r.compat.to_csv().as_bytes())?;
        results.push(r);
    }
    for r in &results {
        emit(obs, &format!("{dir}/{}_rd_old.csv", r.label), r.old_curve.to_csv().as_bytes())?;
        emit(obs, &format!("{dir}/{}_rd_new.csv", r.label), r.new_curve.to_csv().as_bytes())?;
    }
    Ok(SeedRun { seed, pretrained, new_data, results })
}

fn emit(obs: &mut dyn Observer, name: &str, bytes: &[u8]) -> Result<(), ScenarioError> {
    obs.artifact(name, bytes).stage("write artifacts")
}

/// Runs every seed, then writes `summary.csv` and `summary.svg`.
pub fn run_scenario(cfg: &ScenarioConfig, obs: &mut dyn Observer) -> Result<ScenarioOutcome, ScenarioError> {
    cfg.validate()?;
    emit(obs, "scenario.toml", cfg.to_text().as_bytes())?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        runs.push(run_seed(cfg, seed, obs)?);
    }
    obs.stage("summarizing");
    let summary = Summary::from_runs(&runs);
    emit(obs, "summary.csv", summary.to_csv().as_bytes())?;
    emit(obs, "summary.svg", summary.to_svg().as_bytes())?;
    Ok(ScenarioOutcome { runs, summary })
}
