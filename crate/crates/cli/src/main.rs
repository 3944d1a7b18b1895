//! `cin`: generate map datasets, train the capability net alone or end to
//! end, plan on single maps, evaluate, and dump planner maps.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use cin_core::capability::{
    argmax_accuracy, collect_samples, curriculum_order, train_curriculum, train_supervised, Adam,
    CapabilityNet, LrSchedule, SupervisedConfig,
};
use cin_core::dump::dump_planner_maps;
use cin_core::e2e::{il_samples, train_e2e, E2eConfig, DEFAULT_E2E_SCHEDULE};
use cin_core::eval::{
    emit_report, evaluate, generate_dataset, load_dataset, save_dataset, Dataset, DatasetSpec,
    Split, SplitCounts,
};
use cin_core::gridworld::{load_map, WorldMap};
use cin_core::planner::{GroundTruth, HyperParams, KernelSource, Plan};
use cin_core::{seed, CinError};

use config::{display, require, ConfigError, Flags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cin", version, about = "Grid-world planning with a capability iteration network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a train/val/test dataset of maps and goals.
    GenMaps,
    /// Train the capability net on random-walk transitions.
    TrainCap,
    /// Train the capability net through the planner on expert actions.
    TrainE2e,
    /// Plan on one map and write the greedy trajectory.
    Plan,
    /// Score a model (or the true dynamics) on a dataset split.
    Eval,
    /// Write reward, value and Q maps as text and PNG.
    DumpMaps,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CinError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.flags)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs()?)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::GenMaps => gen_maps(&cfg),
        Command::TrainCap => train_cap(&cfg),
        Command::TrainE2e => train_end_to_end(&cfg),
        Command::Plan => plan(&cfg),
        Command::Eval => eval(&cfg),
        Command::DumpMaps => dump_maps(&cfg),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: display(dir),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: display(path),
        source,
    })
}

/// Planner settings for maps of side `side`, with overrides applied.
fn hyper_params(cfg: &RunConfig, side: usize) -> Result<HyperParams> {
    let mut hp = HyperParams::learned(side);
    if let Some(g) = cfg.gamma()? {
        hp.gamma = g;
    }
    if let Some(k) = cfg.k()? {
        hp.iterations = k;
    }
    if let Some(f) = cfg.kernel_size()? {
        hp.kernel_size = f;
    }
    if let Some(r) = cfg.rp()? {
        hp.r_p = r;
    }
    if let Some(r) = cfg.rn()? {
        hp.r_n = r;
    }
    hp.validate()?;
    Ok(hp)
}

fn open_dataset(cfg: &RunConfig) -> Result<(Dataset, HyperParams)> {
    let dir = require(cfg.data(), "data")?;
    let meta: DatasetSpec = serde_json::from_str(
        &fs::read_to_string(dir.join("meta.json")).map_err(|source| CliError::Io {
            path: display(&dir.join("meta.json")),
            source,
        })?,
    )
    .map_err(CinError::from)?;
    let hp = hyper_params(cfg, meta.side)?;
    Ok((load_dataset(&dir, &hp)?, hp))
}

/// The model named by `--model`, or the true dynamics when none is given.
fn kernel_source(cfg: &RunConfig, hp: &mut HyperParams) -> Result<Box<dyn KernelSource>> {
    match cfg.model() {
        Some(path) => {
            let net = CapabilityNet::load(&path)?;
            if cfg.kernel_size()?.is_some_and(|f| f != net.kernel_size()) {
                return Err(CliError::Usage(format!(
                    "--kernel-size disagrees with model {} (F = {})",
                    display(&path),
                    net.kernel_size()
                )));
            }
            hp.kernel_size = net.kernel_size();
            Ok(Box::new(net))
        }
        None => Ok(Box::new(GroundTruth {
            kernel_size: hp.kernel_size,
        })),
    }
}

fn gen_maps(cfg: &RunConfig) -> Result<()> {
    let kind = cfg.kind()?;
    let side = cfg.m()?.unwrap_or(8);
    let (train, val, test) = cfg.counts()?;
    let mut spec = DatasetSpec::new(kind, side, SplitCounts { train, val, test }, cfg.seed()?);
    if let Some(r) = cfg.roughness()? {
        spec.roughness = r;
    }
    if let Some(dh) = cfg.dh()? {
        spec.delta_h_star = dh;
    }
    let hp = hyper_params(cfg, side)?;
    let ds = generate_dataset(&spec, &hp)?;
    let out = cfg.out("data");
    save_dataset(&ds, &out)?;
    println!(
        "wrote {} {} maps of side {side} to {}",
        spec.counts.total(),
        kind,
        display(&out)
    );
    Ok(())
}

fn train_cap(cfg: &RunConfig) -> Result<()> {
    let (ds, hp) = open_dataset(cfg)?;
    let seed = cfg.seed()?;
    let f = hp.kernel_size;
    let maps = |split: Split| -> Vec<WorldMap> { ds.split(split).iter().map(|t| t.map.clone()).collect() };
    let samples = collect_samples(
        &maps(Split::Train),
        cfg.episodes()?,
        cfg.episode_len()?,
        f,
        seed::derive(seed, 0x7361, 0),
    )?;
    let held = collect_samples(&maps(Split::Val), 5, 20, f, seed::derive(seed, 0x7361, 1))?;

    let mut net = CapabilityNet::standard(f, seed)?;
    let mut adam = Adam::with_lr(net.num_params(), cfg.lr(1e-3)?);
    let sup = SupervisedConfig {
        epochs: cfg.epochs(15)?,
        batch: cfg.batch(64)?,
        seed,
        schedule: LrSchedule::Cosine,
    };
    let losses = if cfg.curriculum()? {
        let bins = curriculum_order(&samples, ds.spec.delta_h_star, seed);
        train_curriculum(&mut net, &bins, &sup, &mut adam)?
    } else {
        train_supervised(&mut net, &samples, &sup, &mut adam)?
    };
    let acc = argmax_accuracy(&net, &held)?;

    let out = cfg.out("runs/cap");
    create_dir(&out)?;
    net.save(out.join("model.cinnet"))?;
    let mut log = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(log, "{},{l}", e + 1);
    }
    write_file(&out.join("loss.csv"), &log)?;
    println!(
        "trained on {} samples; final loss {:.3e}; val next-state accuracy {:.4}; model {}",
        samples.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        acc,
        display(&out.join("model.cinnet"))
    );
    Ok(())
}

fn train_end_to_end(cfg: &RunConfig) -> Result<()> {
    let (ds, hp) = open_dataset(cfg)?;
    let seed = cfg.seed()?;
    let mut net = match cfg.model() {
        Some(path) => CapabilityNet::load(path)?,
        None => CapabilityNet::standard(hp.kernel_size, seed)?,
    };
    if net.kernel_size() != hp.kernel_size {
        return Err(CliError::Usage("initial model and --kernel-size disagree".into()));
    }
    let samples = il_samples(&ds.train)?;
    let mut adam = Adam::with_lr(net.num_params(), cfg.lr(1e-3)?);
    let e2e = E2eConfig {
        epochs: cfg.epochs(50)?,
        batch: cfg.batch(32)?,
        seed,
        hp,
        schedule: DEFAULT_E2E_SCHEDULE,
    };
    let log = train_e2e(&mut net, &ds.train, &samples, &e2e, &mut adam)?;

    let out = cfg.out("runs/e2e");
    create_dir(&out)?;
    net.save(out.join("model.cinnet"))?;
    log.save(out.join("train_log.csv"))?;
    let last = log.rows.last().map(|r| r.pct_err).unwrap_or(f64::NAN);
    println!(
        "trained on {} samples for {} epochs; %Err {:.1} -> {:.1}; model {}",
        samples.len(),
        e2e.epochs,
        log.rows[0].pct_err,
        last,
        display(&out.join("model.cinnet"))
    );
    Ok(())
}

fn plan(cfg: &RunConfig) -> Result<()> {
    let map = load_map(require(cfg.map(), "map")?)?;
    let mut hp = hyper_params(cfg, map.side())?;
    let source = kernel_source(cfg, &mut hp)?;
    let (start, goal) = (cfg.start()?, cfg.goal()?);
    let plan = Plan::new(&map, source.as_ref(), goal, &hp)?;
    let (path, outcome) = plan.rollout(&map, start, hp.max_steps)?;

    let out = cfg.out("runs/plan");
    create_dir(&out)?;
    let mut text = String::from("step,row,col\n");
    for (i, s) in path.iter().enumerate() {
        let _ = writeln!(text, "{i},{},{}", s.row, s.col);
    }
    write_file(&out.join("trajectory.csv"), &text)?;
    println!("{outcome:?} after {} steps; trajectory {}", path.len() - 1, display(&out.join("trajectory.csv")));
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let (ds, mut hp) = open_dataset(cfg)?;
    let source = kernel_source(cfg, &mut hp)?;
    let name = cfg.split()?;
    let split = Split::from_name(&name).ok_or_else(|| CliError::Usage(format!("unknown split `{name}`")))?;
    let mut report = evaluate(source.as_ref(), ds.split(split), &hp)?;
    report.config.seed = Some(ds.spec.seed);
    let out = cfg.out("runs/eval");
    emit_report(&report, &out)?;
    println!("{}", report.summary());
    Ok(())
}

fn dump_maps(cfg: &RunConfig) -> Result<()> {
    let map = load_map(require(cfg.map(), "map")?)?;
    let mut hp = hyper_params(cfg, map.side())?;
    let source = kernel_source(cfg, &mut hp)?;
    let plan = Plan::new(&map, source.as_ref(), cfg.goal()?, &hp)?;
    let out = cfg.out("runs/dump");
    let files = dump_planner_maps(&plan.reward, &plan.v, &plan.q, plan.side, &out)?;
    println!("wrote {} files to {}", files.len(), display(&out));
    Ok(())
}
