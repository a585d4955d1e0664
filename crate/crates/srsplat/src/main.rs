use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use srsplat::cameras::load_cameras;
use srsplat::config_io::{apply_overrides, help_table, load_config, write_config};
use srsplat::error::{Error, Result};
use srsplat::experiments::{
    ablation_report, end_to_end, end_to_end_report, gate_ablation, oscillation_report, split_equivalence,
};
use srsplat::ply::{import_ply, write_checkpoint};
use srsplat::run::{
    load_dataset, resolver_for, run_full, write_manifest, write_metrics, write_renders, write_stage2_artifacts,
    FileDepth,
};
use srsplat_core::densify::shuffle_split;
use srsplat_core::pipeline::{evaluate_views, stage1_train, stage2_train, synth_scene, Stage2Input, TrainConfig};

#[derive(Parser)]
#[command(name = "srsplat", version, about = "Sparse-view super-resolution Gaussian splatting")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file (flat TOML); `default` selects the shipped reference config.
    /// Without it every key takes its built-in default.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Override one config key, `key=value`; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (ground truth, rigs, LR/HR/test images, depth).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train at LR from a dataset; writes checkpoints/stage1.ply.
    TrainLr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle-split a cloud.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stage 2: HR training from a stage-1 run directory.
    TrainHr {
        #[arg(long)]
        data: PathBuf,
        /// Run directory of `train-lr`; stage-2 artifacts are written here.
        #[arg(long)]
        out: PathBuf,
        /// Starting cloud; defaults to <out>/checkpoints/split.ply, or to the
        /// split of the stage-1 cloud when that file is absent.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Synthesize, train both stages and evaluate in one go.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a cloud at every camera of a rig file to 16-bit PNGs.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and SSIM of a cloud against a dataset's held-out views.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Comparative experiments; each writes report.txt under --out.
    Experiment {
        name: ExperimentName,
        #[arg(long)]
        out: PathBuf,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    SplitEquivalence,
    RobustGateAblation,
    EndToEnd,
}

fn resolve_config(g: &Global) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(spec) => load_config(spec)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.set("seed", &seed.to_string()).map_err(|e| Error::Validation(e.to_string()))?;
    }
    apply_overrides(&mut cfg, &g.overrides)?;
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Synth { out } => {
            let scene = synth_scene(&cfg).map_err(|e| e.in_stage("synth"))?;
            srsplat::run::write_dataset(&scene, &cfg, &out)?;
            println!("wrote dataset with {} Gaussians to {}", scene.truth.len(), out.display());
        }
        Command::TrainLr { data, out } => {
            let ds = load_dataset(&data)?;
            let views = ds.lr_views(cfg.sr_factor)?;
            create_dir(&out.join("checkpoints"))?;
            write_config(&cfg, &out.join("config.snapshot"))?;
            let s1 = stage1_train(&views, &FileDepth { maps: &ds.depth }, &cfg)?;
            write_checkpoint(&s1.cloud, &out.join("checkpoints/stage1.ply"))?;
            write_metrics(&s1.log, &out.join("metrics.csv"))?;
            println!("stage 1: {} Gaussians", s1.cloud.len());
        }
        Command::Split { input, output } => {
            let cloud = import_ply(&input)?;
            let split = shuffle_split(&cloud, &cfg.split_params()).map_err(|e| e.in_stage("split"))?;
            write_checkpoint(&split, &output)?;
            println!("split {} -> {} Gaussians", cloud.len(), split.len());
        }
        Command::TrainHr { data, out, init } => {
            let ds = load_dataset(&data)?;
            let views = ds.lr_views(cfg.sr_factor)?;
            let lr_cloud = import_ply(&out.join("checkpoints/stage1.ply"))?;
            let default_split = out.join("checkpoints/split.ply");
            let hr_cloud = match init {
                Some(p) => import_ply(&p)?,
                None if default_split.exists() => import_ply(&default_split)?,
                None => {
                    let s = shuffle_split(&lr_cloud, &cfg.split_params()).map_err(|e| e.in_stage("split"))?;
                    write_checkpoint(&s, &default_split)?;
                    s
                }
            };
            let mut oracle = None;
            let resolver = resolver_for(&cfg, ds.truth.as_ref(), &mut oracle)?;
            write_config(&cfg, &out.join("config.snapshot"))?;
            let s2 = stage2_train(
                Stage2Input {
                    hr_cloud,
                    lr_views: &views,
                    lr_cloud: &lr_cloud,
                    resolver,
                },
                &cfg,
            )?;
            let test = ds.test_views();
            write_stage2_artifacts(&s2, &test, &out)?;
            let metrics = out.join("metrics.csv");
            let mut log = s2.log.clone();
            if metrics.exists() {
                let mut prev = read_metrics(&metrics)?;
                prev.extend(log);
                log = prev;
            }
            write_metrics(&log, &metrics)?;
            write_manifest(&out)?;
            println!("stage 2: {} Gaussians", s2.cloud.len());
        }
        Command::Run { out } => {
            let s = run_full(&cfg, &out)?;
            println!(
                "stage 1 {} Gaussians ({:.2} dB), split {}, final {}: test PSNR {:.2} dB, SSIM {:.4}",
                s.stage1_gaussians, s.stage1_test.psnr, s.split_gaussians, s.final_gaussians, s.test.psnr, s.test.ssim
            );
        }
        Command::Render { scene, cameras, out } => {
            let cloud = import_ply(&scene)?;
            let cams = load_cameras(&cameras)?;
            write_renders(&cloud, &cams, &out)?;
            println!("rendered {} views to {}", cams.len(), out.display());
        }
        Command::Eval { scene, data } => {
            let cloud = import_ply(&scene)?;
            let ds = load_dataset(&data)?;
            let per_view = evaluate_views(&cloud, &ds.test_views())?;
            println!("view,psnr,ssim");
            for (i, e) in per_view.iter().enumerate() {
                println!("{i},{:.6},{:.6}", e.psnr, e.ssim);
            }
            let n = per_view.len().max(1) as f64;
            println!(
                "mean,{:.6},{:.6}",
                per_view.iter().map(|e| e.psnr).sum::<f64>() / n,
                per_view.iter().map(|e| e.ssim).sum::<f64>() / n
            );
        }
        Command::Experiment { name, out, seeds } => {
            create_dir(&out)?;
            write_config(&cfg, &out.join("config.snapshot"))?;
            let seed_list = |default: u64| -> Vec<u64> { (0..seeds.unwrap_or(default)).map(|k| cfg.seed + k).collect() };
            let report = match name {
                ExperimentName::SplitEquivalence => split_equivalence(cfg.seed, 16)?.report(),
                ExperimentName::RobustGateAblation => {
                    let rows = gate_ablation(&cfg, &seed_list(5))?;
                    format!("{}\n{}", ablation_report(&rows, &cfg), oscillation_report(20)?)
                }
                ExperimentName::EndToEnd => end_to_end_report(&end_to_end(&cfg, &seed_list(3))?, &cfg),
            };
            write_text(&out.join("report.txt"), &report)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn read_metrics(path: &Path) -> Result<srsplat_core::pipeline::TrainLog> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut log = srsplat_core::pipeline::TrainLog::default();
    for row in r.records() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = || Error::format(path, "malformed metrics row");
        let iter = row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let value = row.get(2).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        log.push(iter, row.get(1).ok_or_else(bad)?, value);
    }
    Ok(log)
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_help(help_table());
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
    {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
