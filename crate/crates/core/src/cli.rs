//! Command-line front end.
//!
//! Every command accepts `--config FILE` holding `key=value` lines, where a
//! key is any long flag of that command (dashes or underscores). File values
//! are applied first, so flags given on the command line win. Before running,
//! the command prints its fully resolved settings to stderr as `key=value`.
//!
//! Setting `ACNV_SEED` replaces every seed a command would otherwise use.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::ctc::{best_path, best_path_decode, lexicon_match, Alphabet, Lexicon};
use crate::data::{self, load_directory, write_dataset, write_pgm, DatasetSpec, Sample};
use crate::init::RngSeed;
use crate::model::{ArchitectureDescriptor, SequenceModeler};
use crate::tensor::{no_grad, Mode, Tensor};
use crate::train::{self, evaluate, Checkpoint, TrainConfig};

pub const SEED_ENV: &str = "ACNV_SEED";

#[derive(Parser, Debug)]
#[command(name = "acnv", version, about = "Attention-convolutional CTC word recognizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset as PGM images plus labels.txt
    Gen(GenArgs),
    /// Train a model and write checkpoints and a metrics log
    Train(TrainArgs),
    /// Report sequence accuracy of a checkpoint on a dataset
    Eval(EvalArgs),
    /// Decode one image
    Decode(DecodeArgs),
    /// Write attention and feature maps of one image as PGM files
    ExportAttention(ExportArgs),
    /// Time the convolutional sequence modeler at several widths, as CSV
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset spec file (vocab, min_len, max_len, count, seed, salt_pepper, gradient, words)
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Override the spec's sample count
    #[arg(long)]
    pub count: Option<usize>,
    /// Override the spec's seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    /// Full-width network
    Standard,
    /// Same topology with narrow layers, for desk-scale runs
    Compact,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset spec for synthetic training data
    #[arg(long, conflicts_with = "train_dir")]
    pub train_spec: Option<PathBuf>,
    /// Directory with labels.txt and PGM training images
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    /// Dataset spec for synthetic evaluation data
    #[arg(long, conflicts_with = "eval_dir")]
    pub eval_spec: Option<PathBuf>,
    /// Directory with labels.txt and PGM evaluation images
    #[arg(long)]
    pub eval_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ArchChoice::Standard)]
    pub arch: ArchChoice,
    /// Build the attention branches; false zeroes every mask
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub attention: bool,
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = train::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    /// Global L2 gradient norm limit
    #[arg(long, default_value_t = train::DEFAULT_CLIP_NORM)]
    pub clip: f64,
    #[arg(long, default_value_t = 250)]
    pub eval_every: u64,
    /// Initialization and batch-order seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Checkpoint path, rewritten at every evaluation
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics log (step, loss, seq_acc), appended at every evaluation
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Continue from the checkpoint if it exists
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset spec for synthetic evaluation data
    #[arg(long, conflicts_with = "dir")]
    pub spec: Option<PathBuf>,
    /// Directory with labels.txt and PGM images
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Word list for lexicon-based accuracy
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Write per-sample predictions (truth, lexicon-free, lexicon) as TSV
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PGM image, resized to 32x100
    #[arg(long)]
    pub image: PathBuf,
    /// Word list constraining the output
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Also print the per-frame top-1 classes (blank shown as '-')
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub frames: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PGM image, resized to 32x100
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// key=value file with flag defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated sequence widths
    #[arg(long, value_delimiter = ',', default_value = "25,50,100")]
    pub lengths: Vec<usize>,
    /// Timed runs per width
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Untimed runs per width
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Height of the packed sequence map (feature dimension)
    #[arg(long, default_value_t = 2048)]
    pub height: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV destination; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The clap command with every subcommand letting a later flag override an
/// earlier one, which is what makes config-file merging work.
pub fn command() -> clap::Command {
    Cli::command().mut_subcommands(|s| s.args_override_self(true))
}

/// Inserts `--key=value` for every entry of the `--config` file right after
/// the subcommand name, so explicit flags (which come later) take priority.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(2) {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let pairs = data::parse_key_values(&text, &path)?;
    let mut injected = Vec::with_capacity(pairs.len());
    for (line, key, value) in pairs {
        let flag = key.replace('_', "-");
        if flag == "config" {
            bail!("{}: line {line}: a config file cannot name another config file", path.display());
        }
        injected.push(format!("--{flag}={value}"));
    }
    let mut out = args;
    let tail = out.split_off(2.min(out.len()));
    out.extend(injected);
    out.extend(tail);
    Ok(out)
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("{SEED_ENV} must be an unsigned integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: Vec<String>) -> Result<()> {
    let args = expand_config(args)?;
    let matches = command().try_get_matches_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            std::process::exit(0);
        }
        _ => anyhow!("{}", first_line(&e.to_string())),
    })?;
    let cli = Cli::from_arg_matches(&matches)?;
    let seed = env_seed()?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Decode(a) => cmd_decode(a),
        Command::ExportAttention(a) => cmd_export_attention(a),
        Command::Bench(a) => cmd_bench(a, seed),
    }
}

fn first_line(s: &str) -> String {
    s.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim_start_matches("error: ")
        .to_string()
}

fn echo(pairs: &[(&str, String)]) {
    let mut s = String::from("# resolved configuration\n");
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    eprint!("{s}");
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

fn load_spec(path: Option<&Path>, default_seed: u64) -> Result<DatasetSpec> {
    match path {
        Some(p) => Ok(DatasetSpec::load(p)?),
        None => Ok(DatasetSpec {
            seed: RngSeed(default_seed),
            ..DatasetSpec::default()
        }),
    }
}

fn indent_spec(prefix: &str, spec: &DatasetSpec) -> String {
    spec.to_text()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{prefix}.{l}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_gen(a: GenArgs, env: Option<u64>) -> Result<()> {
    let mut spec = load_spec(a.spec.as_deref(), 1)?;
    if let Some(c) = a.count {
        spec.count = c;
    }
    if let Some(s) = env.or(a.seed) {
        spec.seed = RngSeed(s);
    }
    spec.validate()?;
    eprint!("# resolved configuration\n{}out={}\n", spec.to_text(), a.out.display());
    let samples = spec.generate()?;
    let labels = write_dataset(&a.out, &samples)
        .with_context(|| format!("writing dataset to {}", a.out.display()))?;
    eprintln!("wrote {} images and {}", samples.len(), labels.display());
    Ok(())
}

fn load_data(spec: Option<&Path>, dir: Option<&Path>, default_seed: u64, env: Option<RngSeed>) -> Result<(Vec<Sample>, String)> {
    if let Some(dir) = dir {
        let report = load_directory(dir, &dir.join("labels.txt"))?;
        for s in &report.skipped {
            eprintln!("warning: {}: line {}: {}", dir.join("labels.txt").display(), s.line, s.reason);
        }
        eprintln!("{}: {}", dir.display(), report.summary());
        return Ok((report.samples, format!("dir={}", dir.display())));
    }
    let mut spec = load_spec(spec, default_seed)?;
    if let Some(s) = env {
        spec.seed = s;
    }
    let desc = indent_spec("data", &spec);
    Ok((spec.generate()?, desc))
}

fn cmd_train(a: TrainArgs, env: Option<u64>) -> Result<()> {
    let arch = match a.arch {
        ArchChoice::Standard => ArchitectureDescriptor::standard(),
        ArchChoice::Compact => ArchitectureDescriptor::compact(),
    }
    .with_attention(a.attention);
    let seed = env.map_or(RngSeed(a.seed), RngSeed);
    let config = TrainConfig {
        arch,
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        clip_norm: a.clip,
        eval_every: a.eval_every,
        seed,
        checkpoint: Some(a.checkpoint.clone()),
        metrics: a.metrics.clone(),
    };
    let (train_set, train_desc) = load_data(
        a.train_spec.as_deref(),
        a.train_dir.as_deref(),
        1,
        env.map(RngSeed),
    )?;
    let (eval_set, eval_desc) = load_data(
        a.eval_spec.as_deref(),
        a.eval_dir.as_deref(),
        2,
        env.map(|s| RngSeed(s).derive(1)),
    )?;
    echo(&[
        ("train", train_desc),
        ("eval", eval_desc),
        ("arch", format!("{:?}", a.arch).to_lowercase()),
        ("attention", a.attention.to_string()),
        ("steps", a.steps.to_string()),
        ("batch_size", a.batch_size.to_string()),
        ("lr", a.lr.to_string()),
        ("clip", a.clip.to_string()),
        ("eval_every", a.eval_every.to_string()),
        ("seed", seed.0.to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("metrics", show(&a.metrics)),
        ("resume", a.resume.to_string()),
    ]);
    let resume = if a.resume && a.checkpoint.exists() {
        let c = Checkpoint::load(&a.checkpoint)?;
        eprintln!("resuming from step {}", c.step);
        Some(c)
    } else {
        None
    };
    let start = Instant::now();
    let out = train::train(&config, &train_set, &eval_set, resume, &mut |r| {
        if r.step % 10 == 0 {
            eprintln!(
                "step {} loss {:.4} clip {:.3} elapsed {:.1}s",
                r.step,
                r.loss,
                r.clip_scale,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    for e in &out.evals {
        println!("{}\t{}\t{}", e.step, e.loss, e.accuracy);
    }
    if out.infeasible > 0 {
        eprintln!("skipped {} infeasible samples", out.infeasible);
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<crate::model::Model> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ckpt.restore()?)
}

fn load_lexicon(path: Option<&Path>) -> Result<Option<Lexicon>> {
    let Some(p) = path else { return Ok(None) };
    let lex = Lexicon::load(&Alphabet::alphanumeric(), p)?;
    if lex.is_empty() {
        bail!("{}: lexicon is empty", p.display());
    }
    Ok(Some(lex))
}

fn cmd_eval(a: EvalArgs, env: Option<u64>) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let (samples, desc) = load_data(a.spec.as_deref(), a.dir.as_deref(), 2, env.map(|s| RngSeed(s).derive(1)))?;
    echo(&[
        ("ckpt", a.ckpt.display().to_string()),
        ("data", desc),
        ("lexicon", show(&a.lexicon)),
        ("dump", show(&a.dump)),
    ]);
    let report = evaluate(&model, &samples, lexicon.as_ref())?;
    if let Some(path) = &a.dump {
        let alphabet = Alphabet::alphanumeric();
        let mut s = String::new();
        for p in &report.predictions {
            let lex = p.lexicon.as_ref().map_or_else(String::new, |l| alphabet.decode(l));
            let _ = writeln!(s, "{}\t{}\t{}", alphabet.decode(&p.truth), alphabet.decode(&p.free), lex);
        }
        fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn load_image(path: &Path) -> Result<Tensor> {
    let pixels = data::load_resized(path).with_context(|| format!("reading image {}", path.display()))?;
    let values = pixels.iter().map(|&p| data::normalize_pixel(p)).collect();
    Ok(Tensor::new(&[1, 1, data::IMAGE_HEIGHT, data::IMAGE_WIDTH], values)?)
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    echo(&[
        ("ckpt", a.ckpt.display().to_string()),
        ("image", a.image.display().to_string()),
        ("lexicon", show(&a.lexicon)),
        ("frames", a.frames.to_string()),
    ]);
    let model = load_model(&a.ckpt)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let image = load_image(&a.image)?;
    let dists = no_grad(|| model.forward(&image, Mode::Infer))?;
    let y = &dists[0];
    let alphabet = Alphabet::alphanumeric();
    match &lexicon {
        Some(l) => {
            let m = lexicon_match(y, l)?;
            println!("{}", alphabet.decode(&m.word));
            if m.prediction.is_empty() {
                eprintln!("note: lexicon-free prediction was empty; reporting the nearest lexicon word");
            }
        }
        None => println!("{}", alphabet.decode(&best_path_decode(y))),
    }
    if a.frames {
        println!("{}", alphabet.render_path(&best_path(y)));
    }
    Ok(())
}

/// Channel mean of `[1, C, H, W]`, min-max scaled to 0..=255. A constant map
/// becomes all zeros.
pub fn attention_image(t: &Tensor) -> (usize, usize, Vec<u8>) {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let data = t.data();
    let mut mean = vec![0.0; h * w];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(&data[ch * h * w..(ch + 1) * h * w]) {
            *m += v / c as f64;
        }
    }
    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        mean.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
    } else {
        vec![0; h * w]
    };
    (w, h, pixels)
}

fn cmd_export_attention(a: ExportArgs) -> Result<()> {
    echo(&[
        ("ckpt", a.ckpt.display().to_string()),
        ("image", a.image.display().to_string()),
        ("out", a.out.display().to_string()),
    ]);
    let model = load_model(&a.ckpt)?;
    let image = load_image(&a.image)?;
    let trace = no_grad(|| model.encode(&image, Mode::Infer))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, module) in trace.attention.iter().enumerate() {
        for (kind, t) in [
            ("mask", &module.attention),
            ("features", &module.features),
            ("output", &module.output),
        ] {
            let (w, h, px) = attention_image(t);
            let path = a.out.join(format!("attention{}_{kind}.pgm", i + 1));
            write_pgm(&path, w, h, &px).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Timing of the sequence modeler at one width.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub width: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

impl BenchRow {
    pub fn per_frame_us(&self) -> f64 {
        self.mean_ms * 1000.0 / self.width as f64
    }
}

pub const BENCH_HEADER: &str = "width,repeats,mean_ms,stddev_ms,per_frame_us";

/// Forward latency of a freshly initialized sequence modeler in infer mode.
pub fn bench_sequence_modeler(
    lengths: &[usize],
    repeats: usize,
    warmup: usize,
    height: usize,
    layers: usize,
    kernel: usize,
    seed: RngSeed,
) -> Result<Vec<BenchRow>> {
    if repeats == 0 || lengths.is_empty() || lengths.contains(&0) {
        bail!("bench needs at least one positive length and repeats >= 1");
    }
    let model = SequenceModeler::new(layers, kernel, &mut seed.rng())?;
    let mut rng = seed.derive(1).rng();
    let mut rows = Vec::with_capacity(lengths.len());
    for &w in lengths {
        let values = crate::init::msra_values(height * w, 2, &mut rng)?;
        let map = Tensor::new(&[1, 1, height, w], values)?;
        no_grad(|| model.forward(&map, Mode::Train))?;
        for _ in 0..warmup {
            no_grad(|| model.forward(&map, Mode::Infer))?;
        }
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            no_grad(|| model.forward(&map, Mode::Infer))?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = times.iter().sum::<f64>() / repeats as f64;
        let var = if repeats > 1 {
            times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64
        } else {
            0.0
        };
        rows.push(BenchRow {
            width: w,
            repeats,
            mean_ms: mean,
            stddev_ms: var.sqrt(),
        });
    }
    Ok(rows)
}

/// Least-squares slope of mean latency against width, in microseconds per
/// frame. `None` with fewer than two distinct widths.
pub fn fitted_per_frame_us(rows: &[BenchRow]) -> Option<f64> {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.width as f64).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.mean_ms).sum::<f64>() / n;
    let sxx: f64 = rows.iter().map(|r| (r.width as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = rows.iter().map(|r| (r.width as f64 - mx) * (r.mean_ms - my)).sum();
    Some(sxy / sxx * 1000.0)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            r.width,
            r.repeats,
            r.mean_ms,
            r.stddev_ms,
            r.per_frame_us()
        );
    }
    s
}

fn cmd_bench(a: BenchArgs, env: Option<u64>) -> Result<()> {
    let seed = env.unwrap_or(a.seed);
    let lengths: Vec<String> = a.lengths.iter().map(|l| l.to_string()).collect();
    echo(&[
        ("lengths", lengths.join(",")),
        ("repeats", a.repeats.to_string()),
        ("warmup", a.warmup.to_string()),
        ("height", a.height.to_string()),
        ("layers", a.layers.to_string()),
        ("kernel", a.kernel.to_string()),
        ("seed", seed.to_string()),
        ("out", show(&a.out)),
    ]);
    let rows = bench_sequence_modeler(&a.lengths, a.repeats, a.warmup, a.height, a.layers, a.kernel, RngSeed(seed))?;
    let csv = bench_csv(&rows);
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    if let Some(f) = fitted_per_frame_us(&rows) {
        eprintln!("fitted per-frame cost: {f:.3} us");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn config_values_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "steps=7\nbatch_size=3\n").unwrap();
        let args = argv(&format!("acnv train --config {} --steps 9 --checkpoint c", cfg.display()));
        let expanded = expand_config(args).unwrap();
        assert_eq!(expanded[2], "--steps=7");
        let m = command().try_get_matches_from(expanded).unwrap();
        let Command::Train(t) = Cli::from_arg_matches(&m).unwrap().command else { panic!() };
        assert_eq!((t.steps, t.batch_size), (9, 3));
    }

    #[test]
    fn unknown_config_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "colour=red\n").unwrap();
        let err = run(argv(&format!("acnv bench --config {}", cfg.display()))).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn constant_map_exports_zeros() {
        let (_, _, px) = attention_image(&Tensor::zeros(&[1, 3, 2, 2]));
        assert_eq!(px, vec![0; 4]);
        let t = Tensor::new(&[1, 1, 1, 3], vec![-1.0, 0.0, 3.0]).unwrap();
        assert_eq!(attention_image(&t).2, vec![0, 64, 255]);
    }

    #[test]
    fn fitted_slope() {
        let rows: Vec<BenchRow> = [(25, 1.0), (50, 2.0), (100, 4.0)]
            .iter()
            .map(|&(w, m)| BenchRow { width: w, repeats: 1, mean_ms: m, stddev_ms: 0.0 })
            .collect();
        assert!((fitted_per_frame_us(&rows).unwrap() - 40.0).abs() < 1e-9);
    }
}
