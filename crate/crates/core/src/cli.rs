//! Command-line harness: synthesis, training, evaluation, prediction and the
//! uncertainty workflow. Reports carry a header with the crate version, seed,
//! a CRC32 of the parsed arguments and the checkpoint CRC.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::baselines::{Baseline, SaturationMask};
use crate::checkpoint::{checkpoint_crc, load_checkpoint, save_checkpoint, Checkpoint};
use crate::dataset::{
    load_dataset, read_image, read_manifest, sample_splits, synthesize, write_image, write_manifest, LinearImage,
    ManifestEntry, Sample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{pearson, recovery_error, reproduction_error, summarize, ErrorSummary, Illuminant};
use crate::model::{correct_image, train, CwccConfig, CwccModel, TrainConfig};
use crate::tensor::AdamConfig;
use crate::uncertainty::{
    build_error_dataset, predict_batch, threshold_filter, train_branch, BranchTrainConfig, UncertaintyBranch,
};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const ERRORS_CSV: &str = "errors.csv";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const TAU_SWEEP_CSV: &str = "tau_sweep.csv";
pub const MODEL_FILE: &str = "model.cwck";
pub const UQ_MODEL_FILE: &str = "model_uq.cwck";

#[derive(Debug, Parser, Serialize)]
#[command(name = "cwcc", version, about = "Channel-wise illuminant estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate a seeded synthetic dataset: RIF images plus manifest.csv.
    Synth(SynthArgs),
    /// Train a model on a manifest; writes a checkpoint and train_log.csv.
    Train(TrainArgs),
    /// Evaluate a model or a baseline, optionally with k-fold cross-validation.
    Eval(EvalArgs),
    /// Estimate the illuminant of one image and optionally white-balance it.
    Predict(PredictArgs),
    /// Train and evaluate the error-prediction branch on a trained model.
    Uq(UqArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of scenes.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Square image extent.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Per-channel reflectance multiplier, e.g. 1,0.9,0.75.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "1,1,1")]
    pub bias: Vec<f32>,
    /// Make every scene's mean reflectance achromatic.
    #[arg(long)]
    pub grey_mean: bool,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f32,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long = "input-size", default_value_t = 128)]
    pub input_size: usize,
    /// shared | per_channel
    #[arg(long, default_value = "shared")]
    pub variant: String,
}

impl ModelArgs {
    fn model_config(&self) -> Result<CwccConfig> {
        let config = CwccConfig {
            input_size: self.input_size,
            variant: self.variant.parse()?,
            ..CwccConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint path; defaults to <out>/model.cwck.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fold used for best-epoch selection; excluded from training.
    #[arg(long = "val-fold")]
    pub val_fold: Option<usize>,
    /// Fold excluded from both training and validation.
    #[arg(long = "test-fold")]
    pub test_fold: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Method {
    #[value(name = "cwcc")]
    Cwcc,
    #[value(name = "grey_world")]
    GreyWorld,
    #[value(name = "white_patch")]
    WhitePatch,
    #[value(name = "shades_of_grey")]
    ShadesOfGrey,
    #[value(name = "grey_edge")]
    GreyEdge,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value = "cwcc")]
    pub method: Method,
    /// Minkowski norm for shades_of_grey and grey_edge.
    #[arg(long, default_value_t = 6.0)]
    pub p: f64,
    /// Gaussian pre-smoothing for grey_edge.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Derivative order for grey_edge (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub order: u8,
}

impl BaselineArgs {
    fn baseline(&self) -> Option<Baseline> {
        match self.method {
            Method::Cwcc => None,
            Method::GreyWorld => Some(Baseline::GreyWorld),
            Method::WhitePatch => Some(Baseline::WhitePatch),
            Method::ShadesOfGrey => Some(Baseline::ShadesOfGrey { p: self.p }),
            Method::GreyEdge => Some(Baseline::GreyEdge {
                order: self.order,
                p: self.p,
                sigma: self.sigma,
            }),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trained model; required for --method cwcc without --cv.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub method: BaselineArgs,
    /// Run F-fold cross-validation (cwcc trains a fresh model per fold).
    #[arg(long)]
    pub cv: Option<usize>,
    /// Evaluate only this fold (ignored with --cv).
    #[arg(long)]
    pub fold: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub method: BaselineArgs,
    /// Write the white-balanced image here (.png for 16-bit PNG, else RIF).
    #[arg(long)]
    pub corrected: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct UqArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Trained backbone.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Acceptance threshold on the predicted error, in degrees.
    #[arg(long, default_value_t = 2.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Held-out fold; the branch trains on the others.
    #[arg(long = "test-fold")]
    pub test_fold: Option<usize>,
    /// Train one branch per fold and evaluate each on its held-out fold.
    #[arg(long)]
    pub cv: Option<usize>,
}

/// Parses `std::env::args` and runs the selected subcommand.
pub fn main_with_args<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(Error::invalid(e.to_string())),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let hash = crc32fast::hash(&serde_json::to_vec(&cli.command)?);
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, hash),
        Command::Train(a) => cmd_train(a, hash),
        Command::Eval(a) => cmd_eval(a, hash),
        Command::Predict(a) => cmd_predict(a, hash),
        Command::Uq(a) => cmd_uq(a, hash),
    }
}

pub fn report_header(seed: u64, config_hash: u32, checkpoint_crc: Option<u32>) -> String {
    let ck = checkpoint_crc.map_or_else(|| "none".to_string(), |c| format!("{c:08x}"));
    format!(
        "# cwcc {} seed={seed} config_hash={config_hash:08x} checkpoint_crc={ck}",
        env!("CARGO_PKG_VERSION")
    )
}

fn format_summary(label: &str, s: &ErrorSummary) -> String {
    format!(
        "{label:<13} best25={:.4} mean={:.4} median={:.4} trimean={:.4} worst25={:.4}",
        s.best25, s.mean, s.median, s.trimean, s.worst25
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Prints to stdout and saves the same text.
fn emit_report(path: &Path, text: &str) -> Result<()> {
    print!("{text}");
    write_text(path, text)
}

fn cmd_synth(a: &SynthArgs, hash: u32) -> Result<()> {
    let bias: [f32; 3] = a
        .bias
        .as_slice()
        .try_into()
        .map_err(|_| Error::invalid(format!("--bias needs three values, got {}", a.bias.len())))?;
    let config = SynthConfig {
        height: a.size,
        width: a.size,
        reflectance_bias: bias,
        grey_mean: a.grey_mean,
        noise_std: a.noise,
        folds: a.folds,
        seed: a.seed,
        ..SynthConfig::default()
    };
    // Everything is generated before the first write so a bad request leaves
    // no partial output behind.
    let scenes = synthesize(&config, a.n)?;
    create_dir(&a.out)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let name = PathBuf::from(format!("img_{i:05}.rif"));
        write_image(&s.sample.image, a.out.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            gt: s.sample.gt,
            fold: s.sample.fold,
        });
    }
    write_manifest(&entries, a.out.join("manifest.csv"))?;
    println!("{}", report_header(a.seed, hash, None));
    println!("wrote {} images to {}", a.n, a.out.display());
    Ok(())
}

fn resize_all(samples: Vec<Sample>, size: usize) -> Result<Vec<Sample>> {
    samples
        .into_iter()
        .map(|s| {
            if s.image.height() == size && s.image.width() == size {
                Ok(s)
            } else {
                Ok(Sample {
                    image: s.image.resize(size, size)?,
                    ..s
                })
            }
        })
        .collect()
}

fn cmd_train(a: &TrainArgs, hash: u32) -> Result<()> {
    let config = a.model.model_config()?;
    let samples = resize_all(load_dataset(&a.manifest)?, config.input_size)?;
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for s in samples {
        if Some(s.fold) == a.test_fold {
            continue;
        }
        if Some(s.fold) == a.val_fold {
            val_set.push(s);
        } else {
            train_set.push(s);
        }
    }
    let mut model = CwccModel::new(config, a.seed)?;
    let report = train(&mut model, &train_set, &val_set, &a.model.train_config(a.seed))?;

    create_dir(&a.out)?;
    let rows: Vec<Vec<String>> = report
        .log
        .iter()
        .map(|l| {
            vec![
                l.epoch.to_string(),
                format!("{:.4}", l.train_error),
                format!("{:.4}", l.val_error),
            ]
        })
        .collect();
    write_csv(&a.out.join(TRAIN_LOG), &["epoch", "train_err_deg", "val_err_deg"], &rows)?;
    let ck_path = a.checkpoint.clone().unwrap_or_else(|| a.out.join(MODEL_FILE));
    save_checkpoint(&Checkpoint::from_model(&model, None, a.seed, report.best_epoch), &ck_path)?;

    let mut text = report_header(a.seed, hash, Some(checkpoint_crc(&ck_path)?));
    text.push('\n');
    let _ = writeln!(
        text,
        "variant={} parameters={} train_images={} val_images={} best_epoch={}",
        model.variant().as_str(),
        model.count_parameters(),
        train_set.len(),
        val_set.len(),
        report.best_epoch
    );
    if let Some(last) = report.log.last() {
        let _ = writeln!(
            text,
            "final_train_err={:.4} final_val_err={:.4}",
            last.train_error, last.val_error
        );
    }
    emit_report(&a.out.join("train_report.txt"), &text)
}

/// Loaded model with the CRC of its checkpoint file.
fn load_model(path: &Path) -> Result<(CwccModel, Option<UncertaintyBranch>, u32)> {
    let (model, branch) = load_checkpoint(path)?.to_model()?;
    Ok((model, branch, checkpoint_crc(path)?))
}

enum Estimator {
    Model(CwccModel),
    Baseline(Baseline),
}

impl Estimator {
    fn estimate(&self, images: &[&LinearImage]) -> Result<Vec<Illuminant>> {
        match self {
            Estimator::Model(m) => {
                let s = m.config().input_size;
                let resized = images
                    .iter()
                    .map(|i| if i.height() == s && i.width() == s { Ok((*i).clone()) } else { i.resize(s, s) })
                    .collect::<Result<Vec<_>>>()?;
                m.estimate_batch(&resized.iter().collect::<Vec<_>>())
            }
            Estimator::Baseline(b) => images.iter().map(|i| b.estimate(i, SaturationMask::default())).collect(),
        }
    }
}

struct Scored {
    index: usize,
    est: Illuminant,
    recovery: f64,
    reproduction: f64,
}

fn score(est: &Estimator, samples: &[Sample], indices: &[usize]) -> Result<Vec<Scored>> {
    let images: Vec<&LinearImage> = indices.iter().map(|&i| &samples[i].image).collect();
    let estimates = est.estimate(&images)?;
    Ok(indices
        .iter()
        .zip(estimates)
        .map(|(&i, e)| Scored {
            index: i,
            recovery: recovery_error(&samples[i].gt, &e),
            reproduction: reproduction_error(&samples[i].gt, &e),
            est: e,
        })
        .collect())
}

fn summaries(scored: &[Scored]) -> Result<(ErrorSummary, ErrorSummary)> {
    let rec: Vec<f64> = scored.iter().map(|s| s.recovery).collect();
    let rep: Vec<f64> = scored.iter().map(|s| s.reproduction).collect();
    Ok((summarize(&rec)?, summarize(&rep)?))
}

fn cmd_eval(a: &EvalArgs, hash: u32) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    let samples = load_dataset(&a.manifest)?;
    let mut ck_crc = None;
    let mut text = String::new();
    let mut scored = Vec::new();

    match a.cv {
        Some(folds) => {
            let splits = sample_splits(&samples, folds)?;
            let mut rec = Vec::new();
            let mut rep = Vec::new();
            for split in &splits {
                let est = match a.method.baseline() {
                    Some(b) => Estimator::Baseline(b),
                    None => {
                        let config = a.model.model_config()?;
                        let train_set: Vec<Sample> = split.train.iter().map(|&i| samples[i].clone()).collect();
                        let train_set = resize_all(train_set, config.input_size)?;
                        let mut model = CwccModel::new(config, a.seed)?;
                        train(&mut model, &train_set, &[], &a.model.train_config(a.seed))?;
                        Estimator::Model(model)
                    }
                };
                let fold_scores = score(&est, &samples, &split.test)?;
                let (r, p) = summaries(&fold_scores)?;
                let _ = writeln!(text, "fold {} ({} images)", split.fold, split.test.len());
                let _ = writeln!(text, "  {}", format_summary("recovery", &r));
                let _ = writeln!(text, "  {}", format_summary("reproduction", &p));
                rec.push(r);
                rep.push(p);
                scored.extend(fold_scores);
            }
            let _ = writeln!(text, "average over {folds} folds");
            let _ = writeln!(text, "{}", format_summary("recovery", &ErrorSummary::average(&rec)?));
            let _ = writeln!(text, "{}", format_summary("reproduction", &ErrorSummary::average(&rep)?));
        }
        None => {
            let est = match a.method.baseline() {
                Some(b) => Estimator::Baseline(b),
                None => {
                    let path = a
                        .checkpoint
                        .as_ref()
                        .ok_or_else(|| Error::invalid("--method cwcc needs --checkpoint (or --cv)"))?;
                    let (model, _, crc) = load_model(path)?;
                    ck_crc = Some(crc);
                    Estimator::Model(model)
                }
            };
            let indices: Vec<usize> = (0..samples.len())
                .filter(|&i| a.fold.is_none_or(|f| samples[i].fold == f))
                .collect();
            if indices.is_empty() {
                return Err(Error::invalid("no samples selected for evaluation"));
            }
            scored = score(&est, &samples, &indices)?;
            let (r, p) = summaries(&scored)?;
            let _ = writeln!(text, "{} images", scored.len());
            let _ = writeln!(text, "{}", format_summary("recovery", &r));
            let _ = writeln!(text, "{}", format_summary("reproduction", &p));
        }
    }

    create_dir(&a.out)?;
    let rows: Vec<Vec<String>> = scored
        .iter()
        .map(|s| {
            let e = s.est.rgb();
            vec![
                s.index.to_string(),
                entries[s.index].path.display().to_string(),
                samples[s.index].fold.to_string(),
                e[0].to_string(),
                e[1].to_string(),
                e[2].to_string(),
                s.recovery.to_string(),
                s.reproduction.to_string(),
            ]
        })
        .collect();
    write_csv(
        &a.out.join(ERRORS_CSV),
        &["index", "path", "fold", "est_r", "est_g", "est_b", "recovery_deg", "reproduction_deg"],
        &rows,
    )?;
    let method = a.method.method.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let full = format!("{}\nmethod={method}\n{text}", report_header(a.seed, hash, ck_crc));
    emit_report(&a.out.join("eval_report.txt"), &full)
}

fn cmd_predict(a: &PredictArgs, hash: u32) -> Result<()> {
    let image = read_image(&a.image)?;
    let (est, crc) = match a.method.baseline() {
        Some(b) => (Estimator::Baseline(b), None),
        None => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::invalid("--method cwcc needs --checkpoint"))?;
            let (model, _, crc) = load_model(path)?;
            (Estimator::Model(model), Some(crc))
        }
    };
    let e = est.estimate(&[&image])?.remove(0);
    eprintln!("{}", report_header(a.seed, hash, crc));
    let [r, g, b] = e.rgb();
    println!("{r:.9} {g:.9} {b:.9}");
    if let Some(out) = &a.corrected {
        write_image(&correct_image(&image, &e)?, out)?;
    }
    Ok(())
}

fn cmd_uq(a: &UqArgs, hash: u32) -> Result<()> {
    let (model, _, crc) = load_model(&a.checkpoint)?;
    let size = model.config().input_size;
    let samples = resize_all(load_dataset(&a.manifest)?, size)?;
    let splits: Vec<(usize, Vec<usize>, Vec<usize>)> = match (a.cv, a.test_fold) {
        (Some(folds), _) => sample_splits(&samples, folds)?
            .into_iter()
            .map(|s| (s.fold, s.train, s.test))
            .collect(),
        (None, Some(f)) => {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| samples[i].fold == f);
            vec![(f, train, test)]
        }
        (None, None) => return Err(Error::invalid("uq needs --test-fold or --cv")),
    };
    let cfg = BranchTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };

    let mut text = format!("{}\n", report_header(a.seed, hash, Some(crc)));
    let mut scatter: Vec<(usize, f64, f64)> = Vec::new();
    let mut last_branch = None;
    for (fold, train_idx, test_idx) in &splits {
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::invalid(format!("fold {fold} leaves an empty train or test set")));
        }
        let train_set: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
        let data = build_error_dataset(&model, &train_set)?;
        let mut branch = UncertaintyBranch::new(model.config().hidden_units, a.seed);
        train_branch(&model, &mut branch, &data, &cfg)?;
        let images: Vec<&LinearImage> = test_idx.iter().map(|&i| &samples[i].image).collect();
        let preds = predict_batch(&model, &branch, &images)?;
        let pairs: Vec<(f64, f64)> = preds
            .iter()
            .zip(test_idx)
            .map(|((e, p), &i)| (*p, recovery_error(&samples[i].gt, e)))
            .collect();
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        match pearson(&p, &t) {
            Ok(r) => {
                let _ = writeln!(text, "fold {fold} n={} pearson={r:.4}", pairs.len());
            }
            Err(e) => {
                let _ = writeln!(text, "fold {fold} n={} pearson=undefined ({e})", pairs.len());
            }
        }
        scatter.extend(pairs.iter().map(|&(p, t)| (*fold, p, t)));
        last_branch = Some(branch);
    }

    let pairs: Vec<(f64, f64)> = scatter.iter().map(|&(_, p, t)| (p, t)).collect();
    let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    if let Ok(r) = pearson(&p, &t) {
        let _ = writeln!(text, "pooled n={} pearson={r:.4}", pairs.len());
    }
    let overall = summarize(&t)?;
    let report = threshold_filter(&pairs, a.tau)?;
    let _ = writeln!(text, "{}", report.summary_line());
    let _ = writeln!(
        text,
        "unfiltered worst_true={:.4} worst25_mean={:.4}",
        t.iter().copied().fold(0.0, f64::max),
        overall.worst25
    );

    create_dir(&a.out)?;
    let rows: Vec<Vec<String>> = scatter
        .iter()
        .map(|(f, p, t)| vec![f.to_string(), p.to_string(), t.to_string()])
        .collect();
    write_csv(&a.out.join(SCATTER_CSV), &["fold", "predicted_deg", "true_deg"], &rows)?;

    let top = p.iter().copied().fold(a.tau, f64::max);
    let steps = ((top / 0.25).ceil() as usize).min(10_000);
    let mut sweep = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let tau = k as f64 * 0.25;
        let r = threshold_filter(&pairs, tau)?;
        sweep.push(vec![
            format!("{tau:.4}"),
            r.accepted_count().to_string(),
            r.rejected.to_string(),
            r.worst_accepted.map_or_else(String::new, |w| format!("{w:.4}")),
        ]);
    }
    write_csv(
        &a.out.join(TAU_SWEEP_CSV),
        &["tau_deg", "accepted", "rejected", "worst_accepted_deg"],
        &sweep,
    )?;
    if let Some(branch) = last_branch {
        save_checkpoint(
            &Checkpoint::from_model(&model, Some(&branch), a.seed, 0),
            a.out.join(UQ_MODEL_FILE),
        )?;
    }
    emit_report(&a.out.join("uq_report.txt"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn parses_documented_flags() {
        let cli = Cli::try_parse_from([
            "cwcc", "eval", "--manifest", "m.csv", "--out", "o", "--method", "grey_edge", "--p", "2", "--sigma",
            "1", "--order", "2", "--cv", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(a) => {
                assert_eq!(
                    a.method.baseline(),
                    Some(Baseline::GreyEdge {
                        order: 2,
                        p: 2.0,
                        sigma: 1.0
                    })
                );
                assert_eq!(a.cv, Some(3));
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from([
            "cwcc", "train", "--manifest", "m.csv", "--out", "o", "--seed", "4", "--epochs", "2", "--batch", "8",
            "--lr", "0.01", "--input-size", "64", "--variant", "per_channel",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                let c = a.model.model_config().unwrap();
                assert_eq!((c.input_size, c.variant), (64, Variant::PerChannel));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["cwcc", "eval", "--manifest", "m", "--out", "o", "--method", "magic"]).is_err());
    }

    #[test]
    fn header_fields() {
        let h = report_header(7, 0xabc, Some(0x1234));
        assert!(h.contains("seed=7") && h.contains("config_hash=00000abc") && h.contains("checkpoint_crc=00001234"));
        assert!(report_header(0, 0, None).ends_with("checkpoint_crc=none"));
    }

    #[test]
    fn synth_rejects_zero_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let err = main_with_args(["cwcc", "synth", "--n", "0", "--out", out.to_str().unwrap()]);
        assert!(err.is_err());
        assert!(!out.exists());
    }
}
