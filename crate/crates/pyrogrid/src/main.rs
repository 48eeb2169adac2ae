use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pyrogrid::environment::{self, DatasetManifest, EnvError, GeneratorParams, GridSeries};
use pyrogrid::exchange::RewardKind;
use pyrogrid::metrics::MetricTable;
use pyrogrid::trainer::{train, System, TrainConfig, TrainError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "pyrogrid", about = "Distributed wildfire grid-map prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Iou,
    Adversarial,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: per-agent WFGM files plus manifest.json.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        weeks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_weeks: Option<usize>,
        #[arg(long)]
        val_weeks: Option<usize>,
        #[arg(long)]
        decouple_channels: bool,
    },
    /// Train on a generated dataset; writes checkpoints and logs.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_exchange: bool,
        #[arg(long)]
        no_sysid: bool,
        #[arg(long = "static")]
        static_model: bool,
        #[arg(long)]
        reward: Option<RewardArg>,
    },
    /// Score a checkpoint on the validation split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit one reconstruction and four horizon maps per agent as PGM images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        week: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge the metric tables of every subrun under a directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Some(v) = std::env::var_os("PYROGRID_THREADS") {
        match v.to_string_lossy().parse::<usize>() {
            Ok(n) if n >= 1 => {}
            _ => {
                eprintln!("config error: PYROGRID_THREADS must be a positive integer");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: format!("config error: {}", msg.into()),
        }
    }
    fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: format!("data error: {}", msg.into()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) => EXIT_CONFIG,
            TrainError::Env(_) | TrainError::Io(_) | TrainError::Checkpoint(_) => EXIT_DATA,
            _ => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError {
            code: EXIT_DATA,
            message: format!("data error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: EXIT_DATA,
            message: format!("io error: {e}"),
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(default)]
struct GenConfig {
    generator: GeneratorParams,
    seed: u64,
    train_weeks: usize,
    val_weeks: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            generator: GeneratorParams::default(),
            seed: 0,
            train_weeks: 260,
            val_weeks: 104,
        }
    }
}

fn load_json<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))
        }
    }
}

fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<GridSeries>), CliError> {
    let manifest = DatasetManifest::load(&dir.join("manifest.json"))
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut series = Vec::new();
    for a in &manifest.agents {
        let path = if a.path.is_absolute() {
            a.path.clone()
        } else {
            dir.join(&a.path)
        };
        series.push(environment::load_grid_series(&path)?);
    }
    Ok((manifest, series))
}

/// Config next to a checkpoint unless one is given explicitly.
fn resolve_train_config(
    config: &Option<PathBuf>,
    checkpoint: &Path,
) -> Result<TrainConfig, CliError> {
    let path = match config {
        Some(p) => p.clone(),
        None => {
            let sibling = checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join("config.resolved.json");
            if !sibling.exists() {
                return Err(CliError::config(format!(
                    "no --config given and {} not found",
                    sibling.display()
                )));
            }
            sibling
        }
    };
    load_json(&Some(path))
}

fn write_pgm(path: &Path, w: usize, h: usize, probs: &[f64]) -> Result<(), CliError> {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(probs.iter().map(|p| (255.0 * p.clamp(0.0, 1.0)).round() as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenData {
            config,
            out,
            agents,
            grid,
            weeks,
            seed,
            train_weeks,
            val_weeks,
            decouple_channels,
        } => {
            let mut gc: GenConfig = load_json(&config)?;
            if let Some(n) = agents {
                gc.generator.n_agents = n;
            }
            if let Some(g) = grid {
                gc.generator.raw_h = g;
                gc.generator.raw_w = g;
                gc.generator.out_h = g;
                gc.generator.out_w = g;
            }
            if let Some(w) = weeks {
                gc.generator.weeks = w;
            }
            if let Some(s) = seed {
                gc.seed = s;
            }
            if let Some(t) = train_weeks {
                gc.train_weeks = t;
            }
            if let Some(v) = val_weeks {
                gc.val_weeks = v;
            }
            if decouple_channels {
                gc.generator.decouple_channels = true;
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("gen_config.resolved.json"),
                serde_json::to_string_pretty(&gc).map_err(|e| CliError::config(e.to_string()))?,
            )?;
            environment::generate_dataset(
                &gc.generator,
                gc.seed,
                gc.train_weeks,
                gc.val_weeks,
                &out,
            )?;
            println!(
                "wrote {} agent series + manifest.json to {}",
                gc.generator.n_agents,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            episodes,
            seed,
            no_exchange,
            no_sysid,
            static_model,
            reward,
        } => {
            let mut cfg: TrainConfig = load_json(&config)?;
            let (manifest, series) = load_dataset(&data)?;
            if config.is_none() {
                cfg.n_agents = manifest.agents.len();
                cfg.train_weeks = manifest.train_weeks;
                cfg.val_weeks = manifest.val_weeks;
                let (_, c, h, w) = series[0].dims();
                cfg.channels = c;
                cfg.height = h;
                cfg.width = w;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if no_exchange {
                cfg.use_exchange = false;
            }
            if no_sysid {
                cfg.use_sys_id = false;
            }
            if static_model {
                cfg.static_only = true;
                cfg.use_sys_id = false;
                cfg.use_exchange = false;
            }
            if let Some(r) = reward {
                cfg.reward = match r {
                    RewardArg::Iou => RewardKind::MeanIou,
                    RewardArg::Adversarial => RewardKind::AdversarialMaxLoss,
                };
            }
            let sys = train(&cfg, &series, Some(&out))?;
            sys.save_checkpoint(&out.join("checkpoint_final.pgck"))?;
            println!(
                "trained {} for {} episodes; artifacts in {}",
                cfg.method_label(),
                cfg.episodes,
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            config,
            data,
            split,
            out,
        } => {
            if split != "val" {
                return Err(CliError::config(format!("unsupported split {split:?}")));
            }
            let cfg = resolve_train_config(&config, &checkpoint)?;
            let (_, series) = load_dataset(&data)?;
            let mut sys = System::new(cfg.clone(), &series)?;
            sys.restore_checkpoint(&checkpoint)?;
            let report = sys.evaluate(cfg.method_label())?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("config.resolved.json"),
                serde_json::to_string_pretty(&cfg).map_err(|e| CliError::config(e.to_string()))?,
            )?;
            std::fs::write(out.join("metrics.csv"), report.table.to_csv())?;
            std::fs::write(out.join("metrics.txt"), report.table.to_text())?;
            if let Some(m) = report.obs_mse {
                std::fs::write(out.join("obs_mse.txt"), format!("{m}\n"))?;
            }
            print!("{}", report.table.to_text());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            config,
            data,
            week,
            out,
        } => {
            let cfg = resolve_train_config(&config, &checkpoint)?;
            let (_, series) = load_dataset(&data)?;
            let horizon_max = cfg.horizon_max();
            for gs in &series {
                if week + horizon_max >= gs.dims().0 {
                    return Err(CliError::data(format!(
                        "week {week} leaves no room for horizon {horizon_max}"
                    )));
                }
            }
            let mut sys = System::new(cfg.clone(), &series)?;
            sys.restore_checkpoint(&checkpoint)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("config.resolved.json"),
                serde_json::to_string_pretty(&cfg).map_err(|e| CliError::config(e.to_string()))?,
            )?;
            for (i, gs) in series.iter().enumerate() {
                let (recon, horizons) = sys.predict_maps(i, gs, week)?;
                write_pgm(
                    &out.join(format!("agent{i}_recon.pgm")),
                    cfg.width,
                    cfg.height,
                    &recon,
                )?;
                for (li, maps) in horizons.iter().enumerate() {
                    write_pgm(
                        &out.join(format!("agent{i}_h{}.pgm", cfg.horizons[li])),
                        cfg.width,
                        cfg.height,
                        maps,
                    )?;
                }
            }
            println!(
                "wrote {} images to {}",
                series.len() * (1 + cfg.horizons.len()),
                out.display()
            );
            Ok(())
        }
        Command::Report { run } => {
            let mut merged = MetricTable::default();
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&run)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for dir in entries {
                let csv = dir.join("metrics.csv");
                if let Ok(text) = std::fs::read_to_string(&csv) {
                    if let Some(t) = MetricTable::from_csv(&text) {
                        merged.rows.extend(t.rows);
                    }
                }
            }
            if merged.rows.is_empty() {
                return Err(CliError::data(format!(
                    "no metrics.csv found under {}",
                    run.display()
                )));
            }
            print!("{}", merged.to_text());
            Ok(())
        }
    }
}
