use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use replaycodec::bitstream::{compatibility_report, decode_image_with, encode_image, DecodeOptions, EncodedImage, EXTENSION};
use replaycodec::codec::{ModelConfig, Variant};
use replaycodec::data::{encode_ppm, load_ppm, DatasetSpec, ImageDataset, Manifest, SourceKind};
use replaycodec::evaluation::{bd_rate as bd_rate_of, bpp, rd_svg, rd_sweep, RdCurve};
use replaycodec::scenario::{run_scenario, Observer, ScenarioConfig, ScenarioName};
use replaycodec::training::{self, LambdaDistribution, ReplayBuffer, Strategy, TrainConfig};
use replaycodec::Model32;

use crate::rundir::RunDir;
use crate::{BdRate, CheckCompat, Decode, Encode, EvalRd, Finetune, GenData, Pretrain, Scenario, TrainArgs};

pub struct Failure {
    pub stage: String,
    pub error: anyhow::Error,
}

trait At<T> {
    fn at(self, stage: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> At<T> for Result<T, E> {
    fn at(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage: stage.to_string(), error: e.into() })
    }
}

type Outcome = Result<(), Failure>;

/// `source_a:SEED:COUNT`, `source_b:SEED:COUNT`, a directory of PPM files
/// or a dataset manifest holding exactly one dataset.
pub fn dataset_spec(arg: &str) -> anyhow::Result<DatasetSpec> {
    let path = Path::new(arg);
    if path.is_dir() {
        return Ok(DatasetSpec { path: Some(path.to_path_buf()), ..DatasetSpec::new(SourceKind::Directory, 0, 0) });
    }
    if path.is_file() {
        let manifest = Manifest::from_text(&std::fs::read_to_string(path)?)?;
        let [mut spec] = <[DatasetSpec; 1]>::try_from(manifest.datasets).map_err(|d| anyhow!("manifest lists {} datasets, expected 1", d.len()))?;
        if let (Some(p), Some(base)) = (&spec.path, path.parent()) {
            spec.path = Some(base.join(p));
        }
        return Ok(spec);
    }
    let parts: Vec<&str> = arg.split(':').collect();
    let [kind, seed, count] = parts[..] else {
        bail!("dataset `{arg}` is neither a path nor KIND:SEED:COUNT");
    };
    let kind: SourceKind = kind.parse()?;
    if kind == SourceKind::Directory {
        bail!("directory datasets are given by path");
    }
    Ok(DatasetSpec::new(kind, seed.parse().context("dataset seed")?, count.parse().context("dataset count")?))
}

fn load_dataset(arg: &str) -> anyhow::Result<ImageDataset> {
    Ok(ImageDataset::generate(&dataset_spec(arg)?)?)
}

fn preset(name: &str) -> anyhow::Result<ModelConfig> {
    Ok(match name {
        "default" => ModelConfig::default(),
        "compact" => ModelConfig::compact(),
        "tiny" => ModelConfig::tiny(),
        "micro" => ModelConfig::micro(),
        _ => bail!("unknown preset `{name}` (expected default, compact, tiny or micro)"),
    })
}

fn load_model(path: &Path) -> anyhow::Result<Model32> {
    Model32::load(path).with_context(|| format!("loading {}", path.display()))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn train_config(a: &TrainArgs, base: TrainConfig) -> anyhow::Result<TrainConfig> {
    let mut c = match &a.train_config {
        Some(p) => TrainConfig::from_text(&std::fs::read_to_string(p)?)?,
        None => base,
    };
    if a.train_config.is_none() {
        c.seed = a.seed;
    }
    c.iterations = a.iterations.unwrap_or(c.iterations);
    c.batch_size = a.batch.unwrap_or(c.batch_size);
    c.lr = a.lr.unwrap_or(c.lr);
    c.lambda_low = a.lambda_low.unwrap_or(c.lambda_low);
    c.lambda_high = a.lambda_high.unwrap_or(c.lambda_high);
    Ok(c)
}

pub fn gen_data(a: GenData) -> Outcome {
    let kind: SourceKind = a.source.parse().at("arguments")?;
    let spec = DatasetSpec::new(kind, a.seed, a.count);
    let data = ImageDataset::generate(&spec).at("generate data")?;
    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    for (i, im) in data.canvases().iter().enumerate() {
        run.write(&format!("images/{i:04}.ppm"), &encode_ppm(im)).at("write artifacts")?;
    }
    let manifest = Manifest { datasets: vec![spec] };
    run.write("dataset.toml", manifest.to_text().as_bytes()).at("write artifacts")?;
    println!("wrote {} images", data.len());
    Ok(())
}

pub fn pretrain(a: Pretrain) -> Outcome {
    let cfg = train_config(&a.train, TrainConfig::pretrain(a.train.seed)).at("config")?;
    let mut model_cfg = match &a.model_config {
        Some(p) => std::fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(ModelConfig::from_text(&t)?)),
        None => preset(&a.preset),
    }
    .at("config")?;
    if let Some(v) = &a.arch {
        model_cfg.variant = v.parse::<Variant>().at("config")?;
    }
    model_cfg.lambda_low = cfg.lambda_low;
    model_cfg.lambda_high = cfg.lambda_high;
    model_cfg.seed = cfg.seed;
    let data = load_dataset(&a.train.data).at("load data")?;
    let mut model = Model32::new(model_cfg).at("build model")?;
    eprintln!("pre-training {} parameters for {} iterations", model.store().count(None), cfg.iterations);
    let outcome = training::pretrain(&cfg, &data, &mut model).at("pretrain")?;

    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    let w = |run: &mut RunDir, name: &str, bytes: &[u8]| run.write(name, bytes).map(|_| ()).at("write artifacts");
    w(&mut run, "model.ckpt", &model.to_checkpoint_bytes())?;
    if let Some(ema) = &outcome.ema {
        w(&mut run, "model_ema.ckpt", &ema.to_checkpoint_bytes())?;
    }
    w(&mut run, "train_log.csv", outcome.log.to_csv().as_bytes())?;
    w(&mut run, "train.toml", cfg.to_text().as_bytes())?;
    w(&mut run, "model.toml", model.config().to_text().as_bytes())?;
    println!("final loss {:.4}", outcome.log.rows.last().map_or(f64::NAN, |r| r.combined));
    Ok(())
}

pub fn finetune(a: Finetune) -> Outcome {
    let strategy: Strategy = a.strategy.parse().at("arguments")?;
    if strategy == Strategy::Pretrain {
        return Err(anyhow!("use the pretrain command for pre-training")).at("arguments");
    }
    let mut cfg = train_config(&a.train, TrainConfig::finetune(strategy, a.train.seed)).at("config")?;
    cfg.strategy = strategy;
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    let mut model = load_model(&a.base).at("load checkpoint")?;
    let data = load_dataset(&a.train.data).at("load data")?;
    let replay = match &a.replay_data {
        Some(d) => Some(ReplayBuffer::new(model.clone(), load_dataset(d).at("load replay data")?).at("replay buffer")?),
        None => None,
    };
    eprintln!("fine-tuning with {strategy} for {} iterations", cfg.iterations);
    let outcome = training::finetune(&cfg, &data, replay.as_ref(), &mut model).at("finetune")?;

    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    for (name, bytes) in [
        ("model.ckpt", model.to_checkpoint_bytes()),
        ("train_log.csv", outcome.log.to_csv().into_bytes()),
        ("train.toml", cfg.to_text().into_bytes()),
    ] {
        run.write(name, &bytes).at("write artifacts")?;
    }
    println!("final loss {:.4}", outcome.log.rows.last().map_or(f64::NAN, |r| r.combined));
    Ok(())
}

pub fn encode(a: Encode) -> Outcome {
    let model = load_model(&a.model).at("load checkpoint")?;
    let image = load_ppm(&a.input).at("load image")?;
    let stream = encode_image(&image, a.lambda, &model).at("encode")?;
    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    let path = run.write(&format!("{}.{EXTENSION}", file_stem(&a.input)), &stream.to_bytes()).at("write artifacts")?;
    println!("{}: {} bytes, {:.4} bpp", path.display(), stream.byte_len(), bpp(&stream));
    Ok(())
}

pub fn decode(a: Decode) -> Outcome {
    let model = load_model(&a.model).at("load checkpoint")?;
    let stream = EncodedImage::load(&a.input).at("read bitstream")?;
    let decoded = decode_image_with(&stream, &model, DecodeOptions { force: a.force_decode }).at("decode")?;
    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    let path = run.write(&format!("{}.ppm", file_stem(&a.input)), &encode_ppm(&decoded.image)).at("write artifacts")?;
    println!("{}", path.display());
    Ok(())
}

pub fn eval_rd(a: EvalRd) -> Outcome {
    let model = load_model(&a.model).at("load checkpoint")?;
    let images = load_dataset(&a.data).at("load data")?.eval_images();
    let low = a.lambda_low.unwrap_or(model.config().lambda_low);
    let high = a.lambda_high.unwrap_or(model.config().lambda_high);
    let grid = LambdaDistribution::new(low, high).at("arguments")?.grid(a.points);
    let curve = rd_sweep(&model, &images, &grid).at("rd sweep")?.tagged(&a.data, &a.model.display().to_string());
    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    run.write("rd.csv", curve.to_csv().as_bytes()).at("write artifacts")?;
    run.write("rd.svg", rd_svg(&[(&file_stem(&a.model), &curve)]).as_bytes()).at("write artifacts")?;
    print!("{}", curve.to_csv());
    Ok(())
}

fn read_curve(path: &Path) -> anyhow::Result<RdCurve> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RdCurve::from_csv(&text)?)
}

pub fn bd_rate(a: BdRate) -> Outcome {
    let anchor = read_curve(&a.anchor).at("load curves")?;
    let test = read_curve(&a.test).at("load curves")?;
    let value = bd_rate_of(&anchor, &test).at("bd-rate")?;
    println!("{value:.6}");
    if let Some(out) = &a.out {
        RunDir::open(out).at("run directory")?.write("bd_rate.txt", format!("{value}\n").as_bytes()).at("write artifacts")?;
    }
    Ok(())
}

fn files_with_extension(dir: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

pub fn check_compat(a: CheckCompat) -> Outcome {
    let old = load_model(&a.old).at("load checkpoint")?;
    let new = load_model(&a.new).at("load checkpoint")?;
    let paths = files_with_extension(&a.streams, EXTENSION).at("read bitstreams")?;
    let streams = paths.iter().map(|p| EncodedImage::load(p)).collect::<Result<Vec<_>, _>>().at("read bitstreams")?;
    let originals = paths
        .iter()
        .map(|p| load_ppm(&a.originals.join(format!("{}.ppm", file_stem(p)))))
        .collect::<Result<Vec<_>, _>>()
        .at("load originals")?;
    let report = compatibility_report(&streams, &old, &new, &originals);
    let mut run = RunDir::open(&a.out.out).at("run directory")?;
    run.write("compat.csv", report.to_csv().as_bytes()).at("write artifacts")?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("streams {}", report.items.len());
    println!("mean_psnr_old {}", show(report.mean_psnr_old()));
    println!("mean_psnr_new {}", show(report.mean_psnr_new()));
    println!("mean_delta_psnr {}", show(report.mean_delta()));
    println!("latents_equal {}", report.all_latents_equal());
    println!("failures {}", report.failures());
    Ok(())
}

struct RunObserver {
    run: RunDir,
}

impl Observer for RunObserver {
    fn stage(&mut self, message: &str) {
        eprintln!("{message}");
    }

    fn artifact(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.run.write(name, bytes).map(|_| ())
    }
}

pub fn scenario(a: Scenario) -> Outcome {
    let name: ScenarioName = a.name.parse().map_err(|e: String| anyhow!(e)).at("arguments")?;
    let mut cfg = match &a.config {
        Some(p) => std::fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(ScenarioConfig::from_text(&t)?)),
        None => Ok(ScenarioConfig::preset(name)),
    }
    .at("config")?;
    if cfg.name != name {
        return Err(anyhow!("config describes {}, not {name}", cfg.name)).at("config");
    }
    if let Some(p) = &a.preset {
        let (low, high) = (cfg.model.lambda_low, cfg.model.lambda_high);
        cfg.model = ModelConfig { lambda_low: low, lambda_high: high, ..preset(p).at("config")? };
    }
    if let Some(v) = &a.arch {
        cfg.model.variant = v.parse::<Variant>().at("config")?;
    }
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(g) = a.alpha_grid {
        cfg.alpha_grid = g;
    }
    cfg.pretrain_iterations = a.pretrain_iterations.unwrap_or(cfg.pretrain_iterations);
    cfg.finetune_iterations = a.finetune_iterations.unwrap_or(cfg.finetune_iterations);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);

    let run = RunDir::open(&a.out.out).at("run directory")?;
    let mut obs = RunObserver { run };
    let outcome = run_scenario(&cfg, &mut obs).map_err(|e| Failure { stage: format!("scenario: {}", e.stage), error: anyhow::Error::from_boxed(e.source) })?;
    print!("{}", outcome.summary.to_csv());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_arguments() {
        let s = dataset_spec("source_b:7:12").unwrap();
        assert_eq!((s.kind, s.seed, s.count), (SourceKind::SourceB, 7, 12));
        assert!(dataset_spec("source_a:7").is_err());
        assert!(dataset_spec("dir:1:2").is_err());
        assert!(dataset_spec("source_c:1:2").is_err());
        let dir = tempfile::tempdir().unwrap();
        let d = dataset_spec(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(d.kind, SourceKind::Directory);
    }

    #[test]
    fn presets_by_name() {
        for n in ["default", "compact", "tiny", "micro"] {
            preset(n).unwrap().validate().unwrap();
        }
        assert!(preset("huge").is_err());
    }
}
