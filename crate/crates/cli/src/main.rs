use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tldr_core::controller::{read_checkpoint, visits_csv, write_checkpoint};
use tldr_core::{load_layout, GcrlReward, GoalSelection, RunConfig, RunState, UpdateOrder, METRICS_HEADER};

#[derive(Parser)]
#[command(name = "tldr", version, about = "Unsupervised goal-conditioned exploration on grid mazes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, checkpoints and visit counts.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a layout's goal cells.
    Eval(EvalArgs),
    /// Train every combination of the listed seeds and ablation values.
    Sweep(SweepArgs),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layout file or built-in name (open, large, ultra).
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    phi_dim: Option<usize>,
    /// Output directory; `TLDR_OUT` takes precedence.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    goal_selection: Option<GoalSelection>,
    #[arg(long)]
    gcrl_reward: Option<GcrlReward>,
    #[arg(long)]
    update_order: Option<UpdateOrder>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    layout: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    goal_selection: Vec<GoalSelection>,
    #[arg(long, value_delimiter = ',')]
    gcrl_reward: Vec<GcrlReward>,
    #[arg(long, value_delimiter = ',')]
    update_order: Vec<UpdateOrder>,
}

fn base_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &o.layout {
        cfg.layout = v.clone();
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.horizon {
        cfg.horizon = Some(v);
    }
    if let Some(v) = o.k {
        cfg.k = v;
    }
    if let Some(v) = o.phi_dim {
        cfg.phi_dim = v;
    }
    Ok(cfg)
}

fn out_dir(o: &Overrides) -> PathBuf {
    std::env::var_os("TLDR_OUT").map_or_else(|| o.out_dir.clone(), PathBuf::from)
}

fn run_train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    cfg.validate()?;
    let maze = load_layout(&cfg.layout, cfg.horizon)?;
    fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_text())?;
    let metrics_path = dir.join("metrics.csv");
    fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))?;
    let mut metrics = OpenOptions::new().append(true).open(&metrics_path)?;

    let mut state = RunState::new(cfg.clone(), maze)?;
    for _ in 0..cfg.epochs {
        let row = state.train_epoch()?;
        metrics.write_all(format!("{}\n", row.to_csv_line()).as_bytes())?;
        metrics.flush()?;
        if row.epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(&state, &dir.join("checkpoints").join(format!("epoch_{:05}.ckpt", row.epoch)))?;
        }
        eprintln!(
            "epoch {:>4}  coverage {:>3}/{}  goals {}/{}",
            row.epoch,
            row.coverage_cells,
            state.reachable_cells(),
            row.goals_reached,
            state.maze.goals().len()
        );
    }
    save_checkpoint(&state, &dir.join("checkpoints").join("final.ckpt"))?;
    fs::write(dir.join("visits.csv"), visits_csv(&state.maze, &state.coverage))?;
    Ok(())
}

fn save_checkpoint(state: &RunState, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, state)?;
    w.flush()?;
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<String> {
    let file = File::open(&args.checkpoint).with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let ck = read_checkpoint(&mut BufReader::new(file))?;
    let maze = load_layout(&args.layout, Some(ck.horizon))?;
    if maze.fingerprint() != ck.fingerprint {
        bail!("checkpoint was trained on a different layout than {}", args.layout);
    }
    let report = tldr_core::controller::evaluate(&maze, &ck.qg, maze.goals())?;
    let mut line = format!(
        "goals_reached={} mean_goal_distance={} goals={}",
        report.goals_reached,
        report.mean_goal_distance,
        report.successes.len()
    );
    for (i, s) in report.successes.iter().enumerate() {
        line.push_str(&format!(" goal_{i}={}", u8::from(*s)));
    }
    Ok(line)
}

fn config_tag(cfg: &RunConfig) -> String {
    let text = RunConfig { seed: 0, ..cfg.clone() }.to_text();
    let mut h: u32 = 0x811c_9dc5;
    for b in text.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    format!("{}-{}-{}-{h:08x}", cfg.goal_selection, cfg.gcrl_reward, cfg.update_order)
}

fn or_default<T: Copy>(values: &[T], default: T) -> Vec<T> {
    if values.is_empty() {
        vec![default]
    } else {
        values.to_vec()
    }
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let base = base_config(&args.common)?;
    let root = out_dir(&args.common);
    for &g in &or_default(&args.goal_selection, base.goal_selection) {
        for &r in &or_default(&args.gcrl_reward, base.gcrl_reward) {
            for &o in &or_default(&args.update_order, base.update_order) {
                for &seed in &args.seeds {
                    let cfg = RunConfig { seed, goal_selection: g, gcrl_reward: r, update_order: o, ..base.clone() };
                    let dir = root.join(config_tag(&cfg)).join(format!("seed{seed}"));
                    eprintln!("== {}", dir.display());
                    run_train(&cfg, &dir)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => {
            let mut cfg = base_config(&a.common)?;
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            if let Some(v) = a.goal_selection {
                cfg.goal_selection = v;
            }
            if let Some(v) = a.gcrl_reward {
                cfg.gcrl_reward = v;
            }
            if let Some(v) = a.update_order {
                cfg.update_order = v;
            }
            run_train(&cfg, &out_dir(&a.common))
        }
        Command::Eval(a) => {
            println!("{}", run_eval(&a)?);
            Ok(())
        }
        Command::Sweep(a) => run_sweep(&a),
    }
}
