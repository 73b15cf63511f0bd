use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use planesweep::config::PipelineConfig;
use planesweep::pointcloud::FilterConfig;
use planesweep::FusionStrategy;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "planesweep",
    version,
    about = "Visibility-aware multi-view plane-sweep stereo"
)]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CascadeFlags {
    /// Source views per reference.
    #[arg(long)]
    n_views: Option<usize>,
    /// Fusion strategy: vis, var, ave or max.
    #[arg(long)]
    fusion: Option<FusionStrategy>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Dtu,
    Tanks,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic suites.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenes per suite.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Depth, uncertainty and probability maps for one reference view.
    Depth {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        reference: usize,
        /// Output root; maps go to `<out>/<reference>/`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cascade: CascadeFlags,
    },
    /// Depth for every view, filtering and PLY export.
    Reconstruct {
        scene: PathBuf,
        /// Output PLY path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cascade: CascadeFlags,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Per-stage probability thresholds, e.g. `0.8,0.7,0.8`.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Minimum number of geometrically consistent views.
        #[arg(long)]
        min_views: Option<usize>,
    },
    /// Compare depth outputs against ground truth and print CSV metrics.
    Eval {
        /// Directory of `<id>/depth.pfm` outputs.
        outputs: PathBuf,
        /// Scene directory, or a directory of `<id>.pfm` depth maps.
        gt: PathBuf,
        /// Depth unit for errors; taken from the scene when omitted.
        #[arg(long)]
        interval: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of every fusion strategy for each source-view count.
    Ablate {
        /// Scene directories or directories of scenes.
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        min_views: usize,
        #[arg(long, default_value_t = 8)]
        max_views: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl CascadeFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(n) = self.n_views {
            cfg.n_views = n;
        }
        if let Some(f) = self.fusion {
            cfg.fusion = f;
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth { out, seed, scenes } => {
            if let Some(o) = out {
                cfg.paths.data = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = scenes {
                cfg.synth.scenes_per_suite = n;
            }
            cfg.validate()?;
            commands::init_threads(cfg.jobs)?;
            commands::synth(&cfg)?;
        }
        Command::Depth {
            scene,
            reference,
            out,
            cascade,
        } => {
            cascade.apply(&mut cfg);
            if let Some(o) = out {
                cfg.paths.output = o;
            }
            cfg.validate()?;
            commands::init_threads(cfg.jobs)?;
            commands::depth(&cfg, &scene, reference)?;
        }
        Command::Reconstruct {
            scene,
            out,
            cascade,
            preset,
            thresholds,
            min_views,
        } => {
            cascade.apply(&mut cfg);
            match preset {
                Some(Preset::Dtu) => cfg.filter = FilterConfig::dtu(),
                Some(Preset::Tanks) => cfg.filter = FilterConfig::tanks_and_temples(),
                None => {}
            }
            if let Some(t) = thresholds {
                let Ok(t) = <[f64; 3]>::try_from(t) else {
                    anyhow::bail!("--thresholds takes exactly three values");
                };
                cfg.filter.prob_thresholds = t;
            }
            if let Some(n) = min_views {
                cfg.filter.min_consistent_views = n;
            }
            cfg.validate()?;
            commands::init_threads(cfg.jobs)?;
            commands::reconstruct(&cfg, &scene, out)?;
        }
        Command::Eval {
            outputs,
            gt,
            interval,
            out,
        } => {
            cfg.validate()?;
            return commands::eval(&cfg, &outputs, &gt, interval, out.as_deref());
        }
        Command::Ablate {
            scenes,
            min_views,
            max_views,
            out,
        } => {
            cfg.validate()?;
            commands::init_threads(cfg.jobs)?;
            commands::ablate(&cfg, &scenes, min_views..=max_views, out.as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLANESWEEP_LOG", "warn"))
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
