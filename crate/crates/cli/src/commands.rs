use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use vidmatch::analysis::{self, report};
use vidmatch::io::{self, MANIFEST_FILE};
use vidmatch::model::{ModelConfig, ModelSpec, load_checkpoint, save_checkpoint};
use vidmatch::preprocess::{PreprocessConfig, preprocess_recording};
use vidmatch::rng::derive_seed;
use vidmatch::sampling::{SamplingConfig, SamplingMode, split_ids};
use vidmatch::synth::{SynthConfig, generate_corpus};
use vidmatch::training::{SplitData, TrainConfig, evaluate_accuracy, train};
use vidmatch::{DatasetManifest, EegRecording, SplitSpec, VideoFeatureTrack};

pub const RESOLVED_CONFIG: &str = "config.json";
const REPEAT_STREAM: u64 = 0x7_0000;

/// Bad flags or config contents.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage and config errors, 3 for I/O and data errors.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<vidmatch::Error>() {
            return if e.is_usage() { 2 } else { 3 };
        }
    }
    3
}

#[derive(Debug, Parser)]
#[command(name = "vidmatch", version, about = "Match-vs-mismatch decoding of video stimuli from EEG")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Notch, band-pass and normalize every recording of a corpus.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoint plus history.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Offset sweep, Grad-CAM, silhouette or embedding export.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// SynthConfig JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub confound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// PreprocessConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub notch_hz: Option<f64>,
}

/// Contents of `train --config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: Option<String>,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub arch: ModelConfig,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model spec such as ECVG, ECD3VG or OECVG.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ExperimentConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of independent runs, each with a seed derived from --seed.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Draw a fresh subject split for every run instead of using the manifest's.
    #[arg(long)]
    pub resplit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Balanced,
    Imbalanced,
}

impl From<Mode> for SamplingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Balanced => SamplingMode::Balanced,
            Mode::Imbalanced => SamplingMode::Imbalanced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    fn ids(self, split: &SplitSpec) -> &[String] {
        match self {
            Self::Train => &split.train,
            Self::Val => &split.val,
            Self::Test => &split.test,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long, value_enum, default_value = "balanced")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    Sweep,
    Gradcam,
    Silhouette,
    Embed,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint directories; repeat the flag or separate with commas.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub what: Analysis,
    /// Imposter offsets in seconds for the sweep.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-7,-5,-3,-1,1,3")]
    pub offsets: Vec<f64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("malformed json in `{}`: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    report::write_json(path, value)?;
    Ok(())
}

/// Creates `out`, refusing to reuse a non-empty directory unless forced.
fn prepare_out(out: &OutArgs) -> Result<()> {
    if out.out.exists() {
        let mut entries = fs::read_dir(&out.out).with_context(|| format!("cannot read `{}`", out.out.display()))?;
        if entries.next().is_some() && !out.force {
            bail!("output directory `{}` is not empty (use --force to write into it)", out.out.display());
        }
    }
    fs::create_dir_all(&out.out).with_context(|| format!("cannot create `{}`", out.out.display()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    DatasetManifest::load(&path).with_context(|| format!("loading manifest `{}`", path.display()))
}

fn load_recordings(manifest: &DatasetManifest, ids: &[String]) -> Result<Vec<EegRecording>> {
    ids.iter()
        .map(|id| io::load_recording(manifest, id).with_context(|| format!("loading subject `{id}`")))
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_subjects {
        cfg.n_subjects = v;
    }
    if let Some(v) = a.duration_s {
        cfg.duration_s = v;
    }
    if let Some(v) = a.snr {
        cfg.snr = v;
    }
    if let Some(v) = a.confound {
        cfg.subject_confound_strength = v;
    }
    cfg.validate()?;
    prepare_out(&a.out)?;
    let manifest = generate_corpus(&cfg, &a.out.out)?;
    write_json(&a.out.out.join(RESOLVED_CONFIG), &cfg)?;
    info!("wrote {} subjects to {}", manifest.subjects.len(), a.out.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut cfg: PreprocessConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PreprocessConfig::default(),
    };
    if let Some(v) = a.notch_hz {
        cfg.notch_hz = v;
    }
    let input = load_manifest(&a.manifest)?;
    prepare_out(&a.out)?;
    let dir = &a.out.out;
    let mut out = DatasetManifest::new(dir);
    out.split = input.split.clone();
    out.channel_names = input.channel_names.clone();
    for id in input.subject_ids() {
        let rec = io::load_recording(&input, &id).with_context(|| format!("loading subject `{id}`"))?;
        let clean = preprocess_recording(&rec, &cfg)?;
        out.subjects.push(io::write_recording(dir, &clean)?);
        info!("preprocessed {id}");
    }
    for t in &input.video_tracks {
        let track = io::load_track(&input, &t.track_id)?;
        out.video_tracks.push(io::write_track(dir, &track)?);
    }
    out.validate()?;
    out.save(dir.join(MANIFEST_FILE))?;
    write_json(&dir.join(RESOLVED_CONFIG), &cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct RunMetrics {
    run: usize,
    seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    best_val_accuracy: f64,
    test_accuracy: Option<f64>,
    test_samples: usize,
    split: SplitSpec,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut exp: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &a.model {
        exp.model = Some(m.clone());
    }
    if let Some(m) = a.mode {
        exp.train.mode = m.into();
    }
    if let Some(s) = a.seed {
        exp.train.seed = s;
    }
    if let Some(v) = a.max_epochs {
        exp.train.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        exp.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        exp.train.lr = v;
    }
    exp.sampling.mode = exp.train.mode;
    let spec_text = exp.model.clone().ok_or_else(|| usage("no model spec given (use --model)"))?;
    let spec = ModelSpec::parse(&spec_text)?;
    exp.train.validate()?;
    exp.sampling.validate()?;
    if a.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }

    let manifest = load_manifest(&a.manifest)?;
    let track = io::load_primary_track(&manifest)?;
    let all_ids: Vec<String> = {
        let s = &manifest.split;
        s.train.iter().chain(&s.val).chain(&s.test).cloned().collect()
    };
    let recordings = load_recordings(&manifest, &all_ids)?;
    prepare_out(&a.out)?;

    let mut summary = Vec::new();
    for run in 0..a.repeat {
        let seed = if a.repeat == 1 { exp.train.seed } else { derive_seed(exp.train.seed, REPEAT_STREAM + run as u64) };
        let split = if a.resplit {
            let s = &manifest.split;
            split_ids(&all_ids, s.train.len(), s.val.len(), s.test.len(), seed)?
        } else {
            manifest.split.clone()
        };
        let dir = if a.repeat == 1 { a.out.out.clone() } else { a.out.out.join(format!("run-{run}")) };
        fs::create_dir_all(&dir).with_context(|| format!("cannot create `{}`", dir.display()))?;

        let mut run_cfg = exp.clone();
        run_cfg.train.seed = seed;
        run_cfg.sampling.seed = seed;
        let metrics = train_run(&spec, &run_cfg, &recordings, &track, &split, &dir, run)?;
        write_json(
            &dir.join(RESOLVED_CONFIG),
            &json!({
                "manifest": a.manifest,
                "experiment": run_cfg,
                "repeat": a.repeat,
                "resplit": a.resplit,
                "split": split,
            }),
        )?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        summary.push(metrics);
    }
    if a.repeat > 1 {
        let tests: Vec<f64> = summary.iter().filter_map(|m| m.test_accuracy).collect();
        let (mean, std) = mean_std(&tests);
        write_json(
            &a.out.out.join("summary.json"),
            &json!({
                "model": spec_text,
                "split_strategy": if a.resplit { "resplit" } else { "fixed" },
                "test_accuracy_mean": mean,
                "test_accuracy_std": std,
                "runs": summary,
            }),
        )?;
        write_json(&a.out.out.join(RESOLVED_CONFIG), &json!({ "manifest": a.manifest, "experiment": exp, "repeat": a.repeat, "resplit": a.resplit }))?;
    }
    Ok(())
}

fn train_run(
    spec: &ModelSpec,
    exp: &ExperimentConfig,
    recordings: &[EegRecording],
    track: &VideoFeatureTrack,
    split: &SplitSpec,
    dir: &Path,
    run: usize,
) -> Result<RunMetrics> {
    let train_split = SplitData::new(recordings, track, &split.train, &exp.sampling)?;
    let val_split = SplitData::new(recordings, track, &split.val, &exp.sampling)?;
    let mut history = BufWriter::new(
        File::create(dir.join("history.jsonl")).with_context(|| format!("cannot create history in `{}`", dir.display()))?,
    );
    let mut write_err = None;
    info!("run {run}: training {spec} with seed {}", exp.train.seed);
    let outcome = train(spec, &exp.arch, &train_split, &val_split, &exp.train, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(history, "{line}").and_then(|_| history.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing history.jsonl");
    }
    save_checkpoint(dir, &outcome.model, &outcome.meta)?;

    let mut model = outcome.model;
    let (test_accuracy, test_samples) = if split.test.is_empty() {
        (None, 0)
    } else {
        let balanced = SamplingConfig { mode: SamplingMode::Balanced, ..exp.sampling.clone() };
        let test = SplitData::new(recordings, track, &split.test, &balanced)?;
        let acc = evaluate_accuracy(&mut model, &test.corpus, &test.dataset, exp.train.batch_size)?;
        info!("run {run}: test accuracy {acc:.4}");
        (Some(acc), test.dataset.len())
    };
    Ok(RunMetrics {
        run,
        seed: exp.train.seed,
        best_epoch: outcome.meta.epoch,
        epochs_run: outcome.history.len(),
        best_val_accuracy: outcome.meta.best_val_accuracy,
        test_accuracy,
        test_samples,
        split: split.clone(),
    })
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn split_data(manifest: &DatasetManifest, split: SplitName, sampling: &SamplingConfig) -> Result<(SplitData, VideoFeatureTrack)> {
    let ids = split.ids(&manifest.split);
    if ids.is_empty() {
        return Err(usage(format!("the manifest's {} split is empty", split.as_str())));
    }
    let track = io::load_primary_track(manifest)?;
    let recordings = load_recordings(manifest, ids)?;
    Ok((SplitData::new(&recordings, &track, ids, sampling)?, track))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (mut model, meta) =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint `{}`", a.checkpoint.display()))?;
    let manifest = load_manifest(&a.manifest)?;
    let sampling = SamplingConfig { mode: a.mode.into(), seed: a.seed, ..SamplingConfig::default() };
    let (data, _) = split_data(&manifest, a.split, &sampling)?;
    let accuracy = evaluate_accuracy(&mut model, &data.corpus, &data.dataset, a.batch_size.max(1))?;
    let report = json!({
        "checkpoint": a.checkpoint,
        "model_spec": meta.model_spec,
        "split": a.split.as_str(),
        "mode": SamplingMode::from(a.mode).to_string(),
        "n_subjects": data.recordings.len(),
        "n_samples": data.dataset.len(),
        "accuracy": accuracy,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    if a.checkpoint.is_empty() {
        return Err(usage("at least one --checkpoint is required"));
    }
    let mut models = Vec::with_capacity(a.checkpoint.len());
    for dir in &a.checkpoint {
        let (m, _) = load_checkpoint(dir).with_context(|| format!("loading checkpoint `{}`", dir.display()))?;
        models.push(m);
    }
    let manifest = load_manifest(&a.manifest)?;
    let sampling = SamplingConfig { seed: a.seed, ..SamplingConfig::default() };
    let (data, track) = split_data(&manifest, a.split, &sampling)?;
    prepare_out(&a.out)?;
    let out = &a.out.out;
    let batch = a.batch_size.max(1);
    if a.what != Analysis::Gradcam && models.len() > 1 && a.what != Analysis::Sweep {
        warn!("only the first checkpoint is used for this analysis");
    }

    match a.what {
        Analysis::Sweep => {
            if a.offsets.is_empty() {
                return Err(usage("--offsets is empty"));
            }
            let mut runs = Vec::new();
            for m in &mut models {
                runs.push(analysis::offset_sweep(m, &data, &track, &sampling, &a.offsets, batch)?);
            }
            let mut points = runs[0].clone();
            for (i, p) in points.iter_mut().enumerate() {
                p.accuracy = runs.iter().map(|r| r[i].accuracy).sum::<f64>() / runs.len() as f64;
            }
            report::write_offset_curve(&out.join("offset_curve.csv"), &points)?;
            write_json(&out.join("offset_curve.json"), &json!({ "mean": points, "runs": runs }))?;
        }
        Analysis::Gradcam => {
            let names = manifest.channel_names();
            let map = analysis::gradcam_channel_scores(&mut models, &data, &names, batch)?;
            report::write_channel_scores(&out.join("channel_scores.csv"), &map)?;
            write_json(&out.join("channel_scores.json"), &map)?;
        }
        Analysis::Silhouette => {
            let cmp = analysis::silhouette_comparison(Some(&mut models[0]), &data, batch)?;
            write_json(&out.join("silhouette.json"), &cmp)?;
        }
        Analysis::Embed => {
            let segments = analysis::unique_segments(&data);
            let deep = analysis::embed_segments(&mut models[0], &data, &segments, batch)?;
            let trad = analysis::zscore_columns(&analysis::segment_features(&data, &segments)?);
            let trad: Array2<f32> = trad.mapv(|v| v as f32);
            report::write_embedding(&out.join("deep_embedding.f32"), deep.view())?;
            report::write_embedding(&out.join("traditional_features.f32"), trad.view())?;
            let rows: Vec<_> = segments
                .iter()
                .map(|&(s, start)| json!({ "subject": data.corpus.subject_ids[s], "eeg_start": start }))
                .collect();
            write_json(
                &out.join("embedding.json"),
                &json!({
                    "deep_shape": deep.shape(),
                    "traditional_shape": trad.shape(),
                    "rows": rows,
                }),
            )?;
        }
    }
    write_json(
        &out.join(RESOLVED_CONFIG),
        &json!({
            "checkpoints": a.checkpoint,
            "manifest": a.manifest,
            "what": format!("{:?}", a.what).to_lowercase(),
            "offsets": a.offsets,
            "split": a.split.as_str(),
            "sampling": sampling,
            "batch_size": batch,
        }),
    )?;
    info!("wrote {:?} report to {}", a.what, out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&usage("bad flag")), 2);
        assert_eq!(exit_code(&ModelSpec::parse("EXV").unwrap_err().into()), 2);
        let io_err = anyhow::Error::from(std::io::Error::other("disk")).context("writing");
        assert_eq!(exit_code(&io_err), 3);
        let data: anyhow::Error = vidmatch::Error::ZeroSignal.into();
        assert_eq!(exit_code(&data.context("subject s01")), 3);
        assert_eq!(exit_code(&usage("x").context("outer")), 2);
    }

    #[test]
    fn offsets_accept_negative_values() {
        let cli = Cli::try_parse_from([
            "vidmatch", "analyze", "--checkpoint", "a,b", "--manifest", "m", "--what", "sweep", "--offsets", "-7,-3,1",
            "--out", "o",
        ])
        .unwrap();
        let Command::Analyze(a) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.offsets, vec![-7.0, -3.0, 1.0]);
        assert_eq!(a.checkpoint.len(), 2);
    }
}
