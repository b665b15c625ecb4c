//! Command-line orchestration. Six subcommands: `synth-data`, `train`,
//! `eval`, `gradcheck`, `export-activations`, `sweep`. Usage and
//! configuration mistakes exit 2, runtime failures exit 1, success 0. The
//! `CCDN_THREADS` environment variable caps worker parallelism.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_model, save_checkpoint};
use crate::config::{load_config, RunConfig};
use crate::data::{self, synth_generate, Sample};
use crate::error::Error;
use crate::eval::{self, Stage};
use crate::gradcheck::battery;
use crate::model::Model;
use crate::train::{train, METRICS_HEADER};

/// Points on every emitted cumulative-error-distribution curve.
pub const CED_STEPS: usize = 101;

#[derive(Parser)]
#[command(name = "ccdn", version, about = "Cross-order channel attention landmark kit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic landmark dataset (PGM images, pts files, manifest)
    SynthData(SynthArgs),
    /// Train a variant; writes metrics.csv, ced.csv, checkpoint.ck
    Train(TrainArgs),
    /// Evaluate a checkpoint on a fresh eval split; writes metrics.csv, ced.csv
    Eval(EvalArgs),
    /// Finite-difference checks of every primitive and composed chain
    Gradcheck(GradcheckArgs),
    /// Export per-excitation attention maps as activation_*.pgm
    ExportActivations(ExportArgs),
    /// Train across a gamma or excitation grid; writes sweep.csv
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Run configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Which split geometry to generate
    #[arg(long, default_value = "train", value_parser = ["train", "eval"])]
    split: String,
    /// Override the sample count
    #[arg(long)]
    count: Option<usize>,
    /// Override the dataset generation seed directly
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Override the model variant (baseline, fcdn, ccdn)
    #[arg(long)]
    variant: Option<String>,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch count
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; its config echo rebuilds the model
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Optional config for the data section (model comes from the checkpoint)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per checked operation
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Base seed for the trial streams
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint to read; must be an attention variant (fcdn or ccdn)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Attention site: t (last stack), t1 (previous stack), g (fused)
    #[arg(long, default_value = "g")]
    stage: String,
    /// First eval-split sample to render
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// How many consecutive samples to render
    #[arg(long, default_value_t = 2)]
    count: usize,
    /// Optional config for the data section
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Run configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Grid axis: gamma or excitations
    #[arg(long)]
    axis: String,
    /// Grid points: comma-separated counts for excitations
    /// (e.g. 1,2,3,4), semicolon-separated gamma triples for gamma
    /// (e.g. 0.025,0.01,0.05;0.05,0.02,0.1)
    #[arg(long)]
    values: Option<String>,
    /// Seeds whose median each grid point reports
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Override the epoch count for every sweep run
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(Error::Io(e))
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses and executes `argv` (including the program name), returning the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run(argv: &[String]) -> i32 {
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.cmd {
        Cmd::SynthData(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::ExportActivations(a) => cmd_export(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads() -> std::result::Result<(), String> {
    match std::env::var("CCDN_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(format!("CCDN_THREADS: {e}")),
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| format!("CCDN_THREADS must be a thread count, got '{v}'"))?;
            // A second initialization attempt in the same process is a no-op.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
            Ok(())
        }
    }
}

fn load_or_default(path: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => load_config(p).map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let cfg = load_or_default(args.config.as_deref())?;
    let mut spec = if args.split == "train" { cfg.train_spec() } else { cfg.eval_spec() };
    if let Some(c) = args.count {
        spec.count = c;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate().map_err(usage)?;
    let samples = synth_generate(&spec)?;
    data::save_dataset(&args.out, &samples)?;
    println!(
        "wrote {} samples ({}x{} px, seed {}) to {}",
        samples.len(),
        spec.size,
        spec.size,
        spec.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = load_or_default(args.config.as_deref())?;
    if let Some(v) = &args.variant {
        cfg.model.variant = v.parse().map_err(usage)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    cfg.validate().map_err(usage)?;
    fs::create_dir_all(&args.out)?;

    let train_set = synth_generate(&cfg.train_spec())?;
    let eval_set = synth_generate(&cfg.eval_spec())?;
    let mut model = Model::build(cfg.model.clone(), cfg.seed)?;
    let untrained = mean(&eval::model_nmes(&mut model, &eval_set, cfg.eval_batch)?);
    println!(
        "training {} seed {} on {}/{} samples (untrained nme {untrained:.4})",
        cfg.model.variant,
        cfg.seed,
        train_set.len(),
        eval_set.len()
    );

    let rows = train(&mut model, &train_set, &eval_set, &cfg.train_config(), |row| {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.5}  nme {:.4}",
            row.epoch, row.lr, row.train_loss, row.eval_nme
        );
    })?;

    let mut metrics = String::from(METRICS_HEADER);
    for row in &rows {
        metrics.push('\n');
        metrics.push_str(&row.csv());
    }
    metrics.push('\n');
    fs::write(args.out.join("metrics.csv"), metrics)?;

    let per_image = eval::model_nmes(&mut model, &eval_set, cfg.eval_batch)?;
    let result = eval::summarize(per_image, CED_STEPS)?;
    fs::write(args.out.join("ced.csv"), ced_csv(&result.ced))?;

    let ck = args.out.join("checkpoint.ck");
    save_checkpoint(&model, &ck, cfg.epochs as u32)?;
    println!(
        "final nme {:.4}  failure rate {:.4}  checkpoint {}",
        result.mean_nme,
        result.failure_rate,
        ck.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let (mut model, epoch) = load_model(&args.checkpoint)?;
    let mut cfg = load_or_default(args.config.as_deref())?;
    cfg.model = model.config.clone();
    fs::create_dir_all(&args.out)?;

    let eval_set = synth_generate(&cfg.eval_spec())?;
    let per_image = eval::model_nmes(&mut model, &eval_set, cfg.eval_batch)?;
    let result = eval::summarize(per_image, CED_STEPS)?;

    let mut metrics = String::from("index,nme\n");
    for (i, v) in result.per_image.iter().enumerate() {
        metrics.push_str(&format!("{i},{v:.12e}\n"));
    }
    fs::write(args.out.join("metrics.csv"), metrics)?;
    fs::write(args.out.join("ced.csv"), ced_csv(&result.ced))?;
    println!(
        "checkpoint epoch {epoch}  variant {}  mean nme {:.4}  failure rate {:.4}",
        model.config.variant, result.mean_nme, result.failure_rate
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    if args.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let rows = battery(args.trials, args.seed)?;
    println!("{:<22} {:>10}  {:>7}  result  ({} trials each)", "op", "max_rel", "tol", args.trials);
    for row in &rows {
        println!("{row}");
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Runtime(Error::Numerics(format!(
            "{failed} of {} gradient checks failed",
            rows.len()
        ))));
    }
    println!("all {} checks passed", rows.len());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> CmdResult {
    let stage: Stage = args.stage.parse().map_err(usage)?;
    let (mut model, _) = load_model(&args.checkpoint)?;
    let mut cfg = load_or_default(args.config.as_deref())?;
    cfg.model = model.config.clone();
    fs::create_dir_all(&args.out)?;

    let eval_set = synth_generate(&cfg.eval_spec())?;
    if args.index >= eval_set.len() {
        return Err(Failure::Usage(format!(
            "--index {} out of range for an eval split of {}",
            args.index,
            eval_set.len()
        )));
    }
    let end = (args.index + args.count.max(1)).min(eval_set.len());
    let mut written = 0usize;
    for i in args.index..end {
        let sample = &eval_set[i];
        data::save_pnm(&args.out.join(format!("activation_{i}_input.pgm")), &sample.image)?;
        written += 1;
        for p in 0..model.config.excitations {
            let map = eval::activation_map(&mut model, &sample.image, stage, p)?;
            let name = format!("activation_{i}_{}_p{p}.pgm", args.stage);
            data::save_pnm(&args.out.join(name), &map)?;
            written += 1;
        }
    }
    println!("wrote {written} maps to {}", args.out.display());
    Ok(())
}

/// One grid point's outcome: median NME over the sweep seeds on the
/// occluded eval split and on an occlusion-free control split.
pub struct SweepRow {
    pub label: String,
    pub nme_occluded: f64,
    pub nme_clean: f64,
}

pub fn sweep_csv(axis_header: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{axis_header},nme_occluded,nme_clean\n");
    for r in rows {
        out.push_str(&format!("{},{:.12e},{:.12e}\n", r.label, r.nme_occluded, r.nme_clean));
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Trains `base` once per seed at each grid point (the closure applies the
/// point to a copy of the config) and reports per-point seed medians.
fn sweep_grid(
    base: &RunConfig,
    labels: &[String],
    apply: impl Fn(&mut RunConfig, usize),
    seeds: &[u64],
    mut progress: impl FnMut(&str),
) -> crate::error::Result<Vec<SweepRow>> {
    let occluded = synth_generate(&base.eval_spec())?;
    let mut clean_spec = base.eval_spec();
    clean_spec.occlusion_prob = 0.0;
    let clean = synth_generate(&clean_spec)?;
    let mut train_cache: HashMap<u64, Vec<Sample>> = HashMap::new();

    let mut rows = Vec::with_capacity(labels.len());
    for (vi, label) in labels.iter().enumerate() {
        let mut occ_nmes = Vec::with_capacity(seeds.len());
        let mut clean_nmes = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            apply(&mut cfg, vi);
            cfg.validate()?;
            let train_set = match train_cache.entry(seed) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(synth_generate(&cfg.train_spec())?)
                }
            };
            let mut model = Model::build(cfg.model.clone(), cfg.seed)?;
            train(&mut model, train_set, &occluded, &cfg.train_config(), |_| {})?;
            let occ = mean(&eval::model_nmes(&mut model, &occluded, cfg.eval_batch)?);
            let cln = mean(&eval::model_nmes(&mut model, &clean, cfg.eval_batch)?);
            progress(&format!("{label} seed {seed}: nme occluded {occ:.4} clean {cln:.4}"));
            occ_nmes.push(occ);
            clean_nmes.push(cln);
        }
        rows.push(SweepRow {
            label: label.clone(),
            nme_occluded: median(occ_nmes),
            nme_clean: median(clean_nmes),
        });
    }
    Ok(rows)
}

/// Excitation-count grid; one row per P, medians over `seeds`.
pub fn sweep_excitations(
    base: &RunConfig,
    values: &[usize],
    seeds: &[u64],
    progress: impl FnMut(&str),
) -> crate::error::Result<Vec<SweepRow>> {
    let labels: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    let vals = values.to_vec();
    sweep_grid(base, &labels, move |cfg, i| cfg.model.excitations = vals[i], seeds, progress)
}

/// Regularizer-weight grid; one row per (gamma1, gamma2, gamma3) triple.
pub fn sweep_gammas(
    base: &RunConfig,
    values: &[(f64, f64, f64)],
    seeds: &[u64],
    progress: impl FnMut(&str),
) -> crate::error::Result<Vec<SweepRow>> {
    let labels: Vec<String> =
        values.iter().map(|(a, b, c)| format!("{a},{b},{c}")).collect();
    let vals = values.to_vec();
    sweep_grid(base, &labels, move |cfg, i| cfg.gammas = vals[i], seeds, progress)
}

/// The default gamma grid: the reference triple plus halved and doubled
/// versions of it.
pub fn default_gamma_grid() -> Vec<(f64, f64, f64)> {
    vec![(0.0125, 0.005, 0.025), (0.025, 0.01, 0.05), (0.05, 0.02, 0.1)]
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<Vec<T>, Failure> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Failure::Usage(format!("bad {what} value '{}'", tok.trim())))
        })
        .collect()
}

fn parse_gamma_triples(s: &str) -> std::result::Result<Vec<(f64, f64, f64)>, Failure> {
    s.split(';')
        .map(|triple| {
            let parts: Vec<f64> = parse_list(triple, "gamma")?;
            if parts.len() != 3 {
                return Err(Failure::Usage(format!(
                    "gamma grid points need 3 comma-separated values, got '{triple}'"
                )));
            }
            Ok((parts[0], parts[1], parts[2]))
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let mut base = load_or_default(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        base.epochs = e;
    }
    base.validate().map_err(usage)?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    if seeds.is_empty() {
        return Err(Failure::Usage("--seeds must name at least one seed".into()));
    }
    fs::create_dir_all(&args.out)?;
    let progress = |line: &str| println!("{line}");

    let (header, rows) = match args.axis.as_str() {
        "excitations" => {
            let values: Vec<usize> = match &args.values {
                Some(v) => parse_list(v, "excitation count")?,
                None => vec![1, 2, 3, 4],
            };
            ("excitations", sweep_excitations(&base, &values, &seeds, progress)?)
        }
        "gamma" => {
            let values = match &args.values {
                Some(v) => parse_gamma_triples(v)?,
                None => default_gamma_grid(),
            };
            ("gamma1,gamma2,gamma3", sweep_gammas(&base, &values, &seeds, progress)?)
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown sweep axis '{other}' (expected gamma or excitations)"
            )))
        }
    };

    let path = args.out.join("sweep.csv");
    fs::write(&path, sweep_csv(header, &rows))?;
    println!("wrote {} grid points to {}", rows.len(), path.display());
    Ok(())
}

fn ced_csv(ced: &[(f64, f64)]) -> String {
    let mut out = String::from("threshold,fraction\n");
    for (t, f) in ced {
        out.push_str(&format!("{t:.12e},{f:.12e}\n"));
    }
    out
}
