//! The `fmresynth` command line.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for failures
//! while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::container::Container;
use crate::dataset::{self, CorpusManifest, Instrument, Split};
use crate::error::{Error, Result};
use crate::evaluation::{self, GridCell};
use crate::fm::{self, EnvelopeFrames, RenderSpec, FRAME_RATE, MONOTONIC_INDEX_LIMIT, SAMPLE_RATE};
use crate::model::TrainClip;
use crate::training::{self, load_patch, Checkpoint, IMax, RunConfig};
use crate::wav;

#[derive(Parser, Debug)]
#[command(name = "fmresynth", version, about = "Differentiable FM resynthesis: prepare corpora, train, render and evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Seed for every random choice. Overrides the seed in --config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run config (TOML). Supplies the corpus, patch, i_max and seed defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Nothing is written outside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (all cores when omitted).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a corpus from a directory of wave files, or a synthetic one.
    Prepare(PrepareArgs),
    /// Train decoder and reverb on a prepared corpus.
    Train(TrainArgs),
    /// Resynthesize a wave file through a checkpoint.
    Resynth(ResynthArgs),
    /// Render a patch from an f0 and optional envelopes.
    Render(RenderArgs),
    /// Print Bessel sideband amplitudes for a modulation index.
    Analyze(AnalyzeArgs),
    /// Evaluate an I_max sweep or an ablation grid.
    Eval(EvalArgs),
    /// Check a prepared corpus for consistency.
    Lint(LintArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Directory of wave files to ingest.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// violin, flute or trumpet; sets the confidence threshold.
    #[arg(long)]
    pub instrument: Option<Instrument>,
    /// Generate this many synthetic clips instead of ingesting audio.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Patch rendering the synthetic clips (name or file).
    #[arg(long)]
    pub patch: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Prepared corpus directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Patch name or file.
    #[arg(long)]
    pub patch: Option<String>,
    /// Maximum modulation index: 2, 2pi or 4pi.
    #[arg(long)]
    pub imax: Option<IMax>,
    /// Total optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Clips per minibatch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Continue from the latest checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct ResynthArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Wave file to resynthesize.
    #[arg(long)]
    pub input: PathBuf,
    /// Expected patch; fails when the checkpoint holds a different one.
    #[arg(long)]
    pub patch: Option<String>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Patch name or file.
    #[arg(long)]
    pub patch: Option<String>,
    /// Constant f0 in Hz, or a container file with an `f0_hz` array.
    #[arg(long)]
    pub f0: String,
    /// Container file with an `envelopes` array, frames × oscillators.
    /// Carriers at 1 and modulators at 0 when omitted.
    #[arg(long)]
    pub envelopes: Option<PathBuf>,
    /// Duration; defaults to the length of the f0 or envelope file, else 1 s.
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Maximum modulation index: 2, 2pi or 4pi.
    #[arg(long, default_value = "2")]
    pub imax: IMax,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Modulation index I.
    #[arg(long, allow_negative_numbers = true)]
    pub modindex: f64,
    /// Highest sideband order.
    #[arg(long, default_value_t = 3)]
    pub nmax: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Imax,
    Ablation,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// imax: one row per swept I_max. ablation: one row per patch variant.
    #[arg(long, value_enum)]
    pub grid: Grid,
    /// violin, flute or trumpet.
    #[arg(long)]
    pub instrument: String,
    /// Directory holding one `<patch>_imax-<label>` run directory per cell.
    #[arg(long)]
    pub runs: PathBuf,
    /// Prepared corpus to evaluate on.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// I_max of the ablation grid.
    #[arg(long, default_value = "2")]
    pub imax: IMax,
    /// Corpus split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct LintArgs {
    /// Prepared corpus directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

/// 1 for problems with the invocation or its inputs, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::Config(_)
        | Error::FrameCount { .. }
        | Error::EnvelopeBounds { .. }
        | Error::Missing(_)
        | Error::Domain { .. }
        | Error::Feedback(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 1;
        }
        pool = pool.num_threads(j);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(&cli)),
        Err(e) => Err(Error::Config(e.to_string())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Prepare(a) => prepare(c, a),
        Command::Train(a) => train(c, a),
        Command::Resynth(a) => resynth(c, a),
        Command::Render(a) => render(c, a),
        Command::Analyze(a) => analyze(c, a),
        Command::Eval(a) => eval(c, a),
        Command::Lint(a) => lint(c, a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn config_file(c: &Common) -> Result<Option<RunConfig>> {
    match &c.config {
        None => Ok(None),
        Some(p) if !p.is_file() => Err(Error::Missing(p.clone())),
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?).map(Some),
    }
}

fn seed(c: &Common, cfg: Option<&RunConfig>) -> u64 {
    c.seed.or(cfg.map(|r| r.seed)).unwrap_or(0)
}

fn out_dir(c: &Common) -> Result<&Path> {
    let out = c.out.as_deref().ok_or_else(|| usage("--out <dir> is required"))?;
    std::fs::create_dir_all(out)?;
    Ok(out)
}

fn patch_arg(given: &Option<String>, cfg: Option<&RunConfig>) -> Result<String> {
    given.clone().or(cfg.map(|r| r.patch.clone())).ok_or_else(|| usage("--patch is required"))
}

fn corpus_arg(given: &Option<PathBuf>, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    given.clone().or(cfg.map(|r| r.corpus.clone())).ok_or_else(|| usage("--corpus is required"))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn prepare(c: &Common, a: &PrepareArgs) -> Result<()> {
    let cfg = config_file(c)?;
    let seed = seed(c, cfg.as_ref());
    let manifest = match (&a.input, a.synthetic) {
        (Some(input), None) => {
            if !input.is_dir() {
                return Err(usage(format!("--input {} is not a directory", input.display())));
            }
            let instrument = a.instrument.ok_or_else(|| usage("--instrument is required with --input"))?;
            dataset::ingest(input, instrument, seed, out_dir(c)?)?
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(usage("--synthetic needs at least one clip"));
            }
            let config = load_patch(&patch_arg(&a.patch, cfg.as_ref())?)?;
            dataset::synth_corpus(&config, n, seed, out_dir(c)?)?
        }
        _ => return Err(usage("give exactly one of --input <dir> or --synthetic <n>")),
    };
    let out = c.out.as_deref().expect("checked by out_dir");
    let (train, valid, test) = manifest.counts();
    let digest = hex(&Sha256::digest(std::fs::read(CorpusManifest::path(out))?));
    println!("train {train}\nvalid {valid}\ntest {test}\nmanifest sha256 {digest}");
    Ok(())
}

fn train(c: &Common, a: &TrainArgs) -> Result<()> {
    let mut run = match config_file(c)? {
        Some(r) => r,
        None => {
            let corpus = a.corpus.clone().ok_or_else(|| usage("--corpus or --config is required"))?;
            let patch = a.patch.clone().ok_or_else(|| usage("--patch or --config is required"))?;
            RunConfig::new(corpus, patch)
        }
    };
    if let Some(v) = &a.corpus {
        run.corpus = v.clone();
    }
    if let Some(v) = &a.patch {
        run.patch = v.clone();
    }
    if let Some(v) = a.imax {
        run.i_max = v;
    }
    if let Some(v) = a.steps {
        run.steps = v;
    }
    if let Some(v) = a.batch {
        run.batch = v;
    }
    if let Some(v) = c.seed {
        run.seed = v;
    }
    run.validate()?;
    let out = out_dir(c)?;
    std::fs::write(out.join("run.toml"), run.to_toml())?;
    let summary = training::train(&run, out, a.resume)?;
    println!(
        "steps {}\nfinal train loss {}\nfinal valid loss {}\nbest valid loss {}\ncheckpoint {}",
        summary.steps,
        summary.final_train_loss,
        summary.final_valid_loss,
        summary.best_valid_loss,
        summary.final_checkpoint.display()
    );
    Ok(())
}

fn read_16k(path: &Path) -> Result<Vec<f64>> {
    if !path.is_file() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let (audio, rate) = wav::read_mono(path)?;
    Ok(if rate == SAMPLE_RATE { audio } else { dataset::resample(&audio, rate, SAMPLE_RATE) })
}

fn resynth(c: &Common, a: &ResynthArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(Error::Missing(a.checkpoint.clone()));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if let Some(p) = &a.patch {
        let expected = load_patch(p)?;
        if expected != ckpt.model.config {
            return Err(Error::Mismatch(format!(
                "checkpoint holds patch {:?}, not {:?}",
                ckpt.model.config.name(),
                expected.name()
            )));
        }
    }
    let audio = read_16k(&a.input)?;
    let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "clip".into());
    let clip = TrainClip::from_audio(stem.clone(), audio)?;
    let y = evaluation::resynthesize(&ckpt, &clip)?;
    let m = evaluation::compute_metrics(&clip.target, &y)?;
    let out = out_dir(c)?;
    wav::write_pcm16(&out.join(format!("{stem}.resynth.wav")), &y, SAMPLE_RATE)?;
    wav::write_pcm16(&out.join(format!("{stem}.target.wav")), &clip.target, SAMPLE_RATE)?;
    println!("mss {}\nlsd_db {}\nf0_rmse_cents {}", m.mss, m.lsd_db, m.f0_rmse_cents);
    Ok(())
}

fn render(c: &Common, a: &RenderArgs) -> Result<()> {
    let cfg = config_file(c)?;
    let config = load_patch(&patch_arg(&a.patch, cfg.as_ref())?)?;
    let (f0_values, f0_is_track) = match a.f0.parse::<f64>() {
        Ok(hz) if hz.is_finite() && hz >= 0.0 => (vec![hz], false),
        Ok(hz) => return Err(usage(format!("--f0 {hz} must be a non-negative frequency"))),
        Err(_) => {
            let path = Path::new(&a.f0);
            if !path.is_file() {
                return Err(usage(format!("--f0 {:?} is neither a frequency nor a file", a.f0)));
            }
            (Container::read(path)?.array("f0_hz")?.data().to_vec(), true)
        }
    };
    let env = a.envelopes.as_ref().map(|p| EnvelopeFrames::from_container(&Container::read(p)?)).transpose()?;

    let frames = if let Some(s) = a.seconds {
        if !(s.is_finite() && s > 0.0) {
            return Err(usage("--seconds must be positive"));
        }
        (s * FRAME_RATE).round() as usize
    } else if f0_is_track {
        f0_values.len()
    } else if let Some(e) = &env {
        e.frames()
    } else {
        FRAME_RATE as usize
    };
    if frames == 0 {
        return Err(usage("render needs at least one frame"));
    }
    let f0 = if f0_is_track {
        if f0_values.len() != frames {
            return Err(Error::FrameCount { expected: frames, got: f0_values.len() });
        }
        f0_values
    } else {
        vec![f0_values[0]; frames]
    };
    let env = match env {
        Some(e) if e.frames() != frames => return Err(Error::FrameCount { expected: frames, got: e.frames() }),
        Some(e) => e,
        None => EnvelopeFrames::carriers_only(&config, frames),
    };
    let audio = fm::render(&config, &env, &RenderSpec::new(f0, a.imax.value()))?;
    let out = out_dir(c)?;
    let path = out.join("render.wav");
    wav::write_pcm16(&path, &audio, SAMPLE_RATE)?;
    println!("{} frames, {} samples -> {}", frames, audio.len(), path.display());
    Ok(())
}

fn analyze(c: &Common, a: &AnalyzeArgs) -> Result<()> {
    let i = a.modindex;
    if !(i.is_finite() && i >= 0.0) {
        return Err(usage(format!("--modindex {i} must be non-negative")));
    }
    let top = if i == 0.0 { 0 } else { a.nmax };
    let rows: Vec<(u32, f64)> = (0..=top).map(|n| (n, fm::bessel_j(n, i))).collect();
    let mut text = format!("{:>3} {:>12} {:>12}\n", "n", "J_n(I)", "|J_n(I)|");
    for (n, v) in &rows {
        text.push_str(&format!("{n:>3} {v:>12.6} {:>12.6}\n", v.abs()));
    }
    if (i - MONOTONIC_INDEX_LIMIT).abs() < 1e-9 {
        text.push_str(&format!("I = {MONOTONIC_INDEX_LIMIT} is the monotonic-region boundary\n"));
    } else if i > MONOTONIC_INDEX_LIMIT {
        text.push_str(&format!("I > {MONOTONIC_INDEX_LIMIT}: outside the monotonic region\n"));
    }
    print!("{text}");
    if c.out.is_some() {
        let out = out_dir(c)?;
        let mut w = csv::Writer::from_path(out.join("sidebands.csv")).map_err(|e| Error::Dataset(e.to_string()))?;
        let err = |e: csv::Error| Error::Dataset(e.to_string());
        w.write_record(["n", "j_n", "abs_j_n"]).map_err(err)?;
        for (n, v) in &rows {
            w.write_record([n.to_string(), v.to_string(), v.abs().to_string()]).map_err(err)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn eval(c: &Common, a: &EvalArgs) -> Result<()> {
    let cfg = config_file(c)?;
    let corpus = corpus_arg(&a.corpus, cfg.as_ref())?;
    let cells: Vec<GridCell> = match a.grid {
        Grid::Imax => evaluation::imax_cells(&a.instrument, &a.runs),
        Grid::Ablation => evaluation::ablation_cells(&a.instrument, &a.runs, a.imax),
    }
    .map_err(|e| usage(e.to_string()))?;
    let manifest = CorpusManifest::load(&corpus)?;
    let records = dataset::load_split(&corpus, &manifest, a.split)?;
    if records.is_empty() {
        return Err(Error::Dataset(format!("the {} split of {} is empty", a.split, corpus.display())));
    }
    let clips: Vec<TrainClip> = records.iter().map(TrainClip::from_record).collect::<Result<_>>()?;
    let table = evaluation::run_grid(&cells, &clips)?;
    let out = out_dir(c)?;
    std::fs::write(out.join("grid.csv"), table.to_csv()?)?;
    let text = table.to_text();
    std::fs::write(out.join("grid.txt"), &text)?;
    print!("{text}");
    std::io::stdout().flush()?;
    if !table.complete() {
        let absent = table.rows.iter().filter(|r| r.report.is_none()).count();
        return Err(Error::Dataset(format!("{absent} of {} grid rows absent", table.rows.len())));
    }
    Ok(())
}

fn lint(c: &Common, a: &LintArgs) -> Result<()> {
    let cfg = config_file(c)?;
    let corpus = corpus_arg(&a.corpus, cfg.as_ref())?;
    if !corpus.is_dir() {
        return Err(Error::Missing(corpus));
    }
    let problems = dataset::lint(&corpus)?;
    for p in &problems {
        println!("{p}");
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(format!("{} problems in {}", problems.len(), corpus.display())));
    }
    println!("ok");
    Ok(())
}
