//! Subcommands. Flags override the config file.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use e2edrive::dataset::{SampleStore, Source};
use e2edrive::pilotnet::{load_weights, save_weights, TrainingMetadata};
use e2edrive::policy::{collect, evaluate, format_results, ExpertPolicy, NeuralPolicy, ZeroSteerPolicy};
use e2edrive::trainer::{emit_loss_curve, train, EpochLoss};

use crate::config::{parse_mix, RunConfig};
use crate::server::{self, ServerState};

#[derive(Debug, Parser)]
#[command(name = "e2edrive", version, about = "Behavior-cloning driving gym")]
pub struct Cli {
    /// Run config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert demonstrations into a new sample store.
    Collect(CollectArgs),
    /// Train the network on a sample store.
    Train(TrainArgs),
    /// Evaluate trained weights in closed loop.
    Drive(DriveArgs),
    /// Evaluate the scripted expert in closed loop.
    EvalExpert(EvalArgs),
    /// Evaluate the zero-steering baseline in closed loop.
    EvalBaseline(EvalArgs),
    /// Serve live driving sessions over websocket.
    Serve(ServeArgs),
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub frames: Option<usize>,
    /// Center, recovery and braking fractions, e.g. `0.45,0.2,0.35`.
    #[arg(long)]
    pub mix: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DriveArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episode cap in simulated seconds.
    #[arg(long)]
    pub max_time: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Store for recorded human samples. Recording is off without it.
    #[arg(long)]
    pub record_dir: Option<PathBuf>,
}

fn apply_eval(cfg: &mut RunConfig, args: &EvalArgs) -> Result<()> {
    if let Some(n) = args.episodes {
        cfg.eval.episodes = n;
    }
    if let Some(s) = args.seed {
        cfg.eval.seed = s;
    }
    if let Some(t) = args.max_time {
        cfg.eval.max_time = t;
    }
    cfg.validate()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Collect(a) => {
            if let Some(f) = a.frames {
                cfg.collect.frames = f;
            }
            if let Some(m) = &a.mix {
                cfg.collect.mix = parse_mix(m)?;
            }
            if let Some(o) = a.out {
                cfg.paths.data = o;
            }
            if let Some(s) = a.seed {
                cfg.collect.seed = s;
            }
            cfg.validate()?;
            cmd_collect(&cfg)
        }
        Command::Train(a) => {
            if let Some(d) = a.data {
                cfg.paths.data = d;
            }
            if let Some(o) = a.out {
                cfg.paths.weights = o;
            }
            if let Some(l) = a.loss_curve {
                cfg.paths.loss_curve = l;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            cmd_train(&cfg)
        }
        Command::Drive(a) => {
            if let Some(w) = a.weights {
                cfg.paths.weights = w;
            }
            apply_eval(&mut cfg, &a.eval)?;
            cmd_drive(&cfg)
        }
        Command::EvalExpert(a) => {
            apply_eval(&mut cfg, &a)?;
            let setup = cfg.setup()?;
            let report = evaluate(&mut ExpertPolicy { gains: cfg.expert.clone() }, &setup, &cfg.eval_config())?;
            print!("{}", format_results(&report));
            Ok(())
        }
        Command::EvalBaseline(a) => {
            apply_eval(&mut cfg, &a)?;
            let setup = cfg.setup()?;
            let report = evaluate(&mut ZeroSteerPolicy { gains: cfg.expert.clone() }, &setup, &cfg.eval_config())?;
            print!("{}", format_results(&report));
            Ok(())
        }
        Command::Serve(a) => {
            if let Some(p) = a.port {
                cfg.server.port = p;
            }
            if let Some(h) = a.host {
                cfg.server.host = h;
            }
            let record_dir = a.record_dir;
            cfg.validate()?;
            cmd_serve(&cfg, record_dir)
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn cmd_collect(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.setup()?;
    let dir = &cfg.paths.data;
    let mut store = SampleStore::create(dir, cfg.camera.width, cfg.camera.height)
        .with_context(|| format!("creating store {}", dir.display()))?;
    let manifest = collect(&cfg.collect.mix, cfg.collect.frames, cfg.collect.seed, &mut store, &setup, &cfg.collect_config())?;
    let counts = manifest.tag_counts();
    for source in [Source::ExpertCenter, Source::ExpertRecovery, Source::ExpertBraking] {
        println!("{} {}", source.name(), counts.get(&source).copied().unwrap_or(0));
    }
    println!("total {}", manifest.total);
    println!("checksum {:08x}", store.checksum()?);
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.data;
    if !dir.exists() {
        bail!("sample store {} does not exist", dir.display());
    }
    let store = SampleStore::open(dir).with_context(|| format!("opening store {}", dir.display()))?;
    let split = store.split(cfg.train.val_fraction, cfg.split_seed)?;
    println!("train {} val {} stratified {}", split.train.len(), split.val.len(), split.stratified);
    let mut progress = |e: &EpochLoss, elapsed: f64| {
        println!("epoch {} train_mse {:.6} val_mse {:.6} elapsed {:.1}s", e.epoch, e.train_mse, e.val_mse, elapsed);
    };
    let out = train(&store, &split, &cfg.train, &cfg.crop_region(), Some(&mut progress))?;
    let last = out.curve.epochs.last().expect("at least one epoch");
    let meta = TrainingMetadata {
        epochs_run: out.epochs_run,
        final_train_loss: last.train_mse,
        final_val_loss: out.curve.best().map_or(last.val_mse, |b| b.val_mse),
        seed: cfg.train.seed,
    };
    save_weights(&out.model, &meta, &cfg.paths.weights)?;
    emit_loss_curve(&out.curve, &cfg.paths.loss_curve)?;
    println!(
        "best epoch {} val_mse {:.6}; weights {}; loss curve {}",
        out.best_epoch,
        meta.final_val_loss,
        cfg.paths.weights.display(),
        cfg.paths.loss_curve.display()
    );
    Ok(())
}

fn cmd_drive(cfg: &RunConfig) -> Result<()> {
    let loaded = load_weights(&cfg.paths.weights).with_context(|| format!("loading {}", cfg.paths.weights.display()))?;
    let setup = cfg.setup()?;
    let mut policy = NeuralPolicy { model: loaded.model, region: cfg.crop_region() };
    let report = evaluate(&mut policy, &setup, &cfg.eval_config())?;
    print!("{}", format_results(&report));
    Ok(())
}

fn cmd_serve(cfg: &RunConfig, record_dir: Option<PathBuf>) -> Result<()> {
    let setup = cfg.setup()?;
    let store = match record_dir {
        Some(dir) => Some(Arc::new(Mutex::new(
            SampleStore::open_or_create(&dir, cfg.camera.width, cfg.camera.height)
                .with_context(|| format!("opening record store {}", dir.display()))?,
        ))),
        None => None,
    };
    let state = Arc::new(ServerState::new(setup, cfg.control_dt(), cfg.server.scenario, cfg.server.seed, store));
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async {
        let addr = format!("{}:{}", cfg.server.host, cfg.server.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on ws://{}", listener.local_addr()?);
        tokio::select! {
            r = server::run(listener, state.clone()) => r?,
            _ = tokio::signal::ctrl_c() => println!("shutting down"),
        }
        if let Some(store) = state.store() {
            store.lock().expect("store lock").flush()?;
        }
        Ok(())
    })
}
