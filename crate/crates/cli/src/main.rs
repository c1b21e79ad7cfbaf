//! Single command-line entry point for the full pipeline: motion generation
//! and curation, base training, residual adaptation, evaluation, bound
//! verification, and trajectory replay.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical abort.

mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use ptbc_core::error::{Error, Result};
use ptbc_core::evalkit;
use ptbc_core::motion::{self, io as motion_io, MotionLibrary};
use ptbc_core::trainer::{self, Checkpoint};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "ptbc",
    about = "Planar two-link balance-tracking controller pipeline",
    long_about = "Train, adapt, and evaluate a balance-tracking controller on a planar \
two-link robot. Run `ptbc print-config` for every configuration key with its default value."
)]
struct Cli {
    /// TOML configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for the invoked command.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a preset motion family as clip files plus a manifest.
    GenMotions {
        /// One of: source, target, aggressive.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Curate clips: optional augmentation, height correction, then
    /// balance-signal annotation and contact masks.
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Time-rescale factor in [0.5, 2.0].
        #[arg(long)]
        speed: Option<f64>,
        /// Joint perturbation as `joint,delta` (joint 0 = ankle, 1 = hip);
        /// the other joint compensates by −delta/2.
        #[arg(long)]
        perturb: Option<String>,
        /// Target 25th-percentile foot clearance [m].
        #[arg(long)]
        clearance: Option<f64>,
        /// Contact threshold on foot height [m].
        #[arg(long, default_value_t = 0.01)]
        contact_thresh: f64,
    },
    /// Train the base mixture-of-experts controller.
    TrainBase {
        #[arg(long)]
        motions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Line-delimited JSON training log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        envs: Option<usize>,
        /// Stop early at this training-mode success rate (percent).
        #[arg(long)]
        target_succ: Option<f64>,
    },
    /// Adapt a frozen base controller with a residual policy.
    Adapt {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        motions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lambda_p: Option<f64>,
        #[arg(long)]
        lambda_k: Option<f64>,
    },
    /// Evaluate a checkpoint over a motion directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        motions: PathBuf,
        /// train, eval_2m, or eval_1p5m.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// json or csv.
        #[arg(long)]
        format: Option<String>,
    },
    /// Numerically verify the Lipschitz and residual-norm bounds of an
    /// adapted checkpoint.
    Verify {
        #[arg(long)]
        ckpt: PathBuf,
        /// Motion directory for rollout states (defaults to the built-in
        /// out-of-distribution preset).
        #[arg(long)]
        motions: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        states: usize,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a checkpoint on one clip and dump the trajectory as CSV.
    Replay {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the full configuration with defaults (and exit).
    PrintConfig,
}

#[derive(Serialize)]
struct Manifest {
    preset: String,
    seed: u64,
    clips: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    name: String,
    frames: usize,
    tags: Vec<String>,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_library(dir: &Path, cfg: &RunConfig) -> Result<MotionLibrary> {
    let clips = motion_io::load_dir(dir, &cfg.model)?;
    MotionLibrary::new(clips, cfg.sampler.clip_len)
}

fn write_logs(path: &Option<PathBuf>, logs: &[trainer::IterLog]) -> Result<()> {
    if let Some(p) = path {
        let mut out = String::new();
        for log in logs {
            out.push_str(&serde_json::to_string(log).expect("log serialization"));
            out.push('\n');
        }
        std::fs::write(p, out)?;
    }
    Ok(())
}

fn finish_training(out: &Path, log: &Option<PathBuf>, outcome: trainer::TrainOutcome) -> Result<()> {
    outcome.checkpoint.save(out)?;
    write_logs(log, &outcome.logs)?;
    if let Some(last) = outcome.logs.last() {
        eprintln!(
            "finished at iteration {} (mean reward {:.3}, lr {:.2e})",
            last.iteration, last.mean_reward, last.lr
        );
    }
    if outcome.aborted {
        return Err(Error::Numerical("training aborted; last good checkpoint written".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::GenMotions { preset, out, force } => {
            if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) && !force {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} is not empty (use --force)",
                    out.display()
                )));
            }
            std::fs::create_dir_all(&out)?;
            let clips = motion::gen::preset(&preset, cli.seed, &cfg.model)?;
            let mut manifest = Manifest { preset: preset.clone(), seed: cli.seed, clips: Vec::new() };
            for (i, clip) in clips.iter().enumerate() {
                let file = format!("{i:02}_{}.json", clip.name);
                motion_io::write_clip(clip, out.join(&file))?;
                manifest.clips.push(ManifestEntry {
                    file,
                    name: clip.name.clone(),
                    frames: clip.len(),
                    tags: clip.tags.iter().cloned().collect(),
                });
            }
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
            )?;
            eprintln!("wrote {} clips to {}", manifest.clips.len(), out.display());
            Ok(())
        }
        Command::Curate { input, out, speed, perturb, clearance, contact_thresh } => {
            std::fs::create_dir_all(&out)?;
            let perturb = match perturb {
                None => None,
                Some(s) => {
                    let parts: Vec<&str> = s.split(',').collect();
                    if parts.len() != 2 {
                        return Err(Error::InvalidArgument(format!(
                            "--perturb expects `joint,delta`, got '{s}'"
                        )));
                    }
                    let joint: usize = parts[0]
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad joint index '{}'", parts[0])))?;
                    let delta: f64 = parts[1]
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad delta '{}'", parts[1])))?;
                    Some((joint, delta))
                }
            };
            let mut processed = 0usize;
            let mut failed = 0usize;
            let mut entries: Vec<_> = std::fs::read_dir(&input)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
                .filter(|p| p.file_name().map(|n| n != "manifest.json").unwrap_or(true))
                .collect();
            entries.sort();
            for path in entries {
                match curate_one(&path, &cfg, speed, perturb, clearance, contact_thresh) {
                    Ok(clip) => {
                        motion_io::write_clip(&clip, out.join(path.file_name().expect("file name")))?;
                        processed += 1;
                    }
                    Err(e) => {
                        eprintln!("skipping {}: {e}", path.display());
                        failed += 1;
                    }
                }
            }
            eprintln!("curated {processed} clips ({failed} skipped)");
            if processed == 0 {
                return Err(Error::InvalidArgument("no clips could be curated".into()));
            }
            Ok(())
        }
        Command::TrainBase { motions, out, log, iterations, envs, target_succ } => {
            let library = load_library(&motions, &cfg)?;
            let mut tcfg = cfg.trainer_cfg();
            if let Some(n) = iterations {
                tcfg.ppo.iterations = n;
            }
            if let Some(n) = envs {
                tcfg.ppo.n_envs = n;
            }
            if let Some(s) = target_succ {
                tcfg.ppo.target_succ = s;
            }
            let outcome = trainer::train_base(&library, &tcfg, cli.seed)?;
            finish_training(&out, &log, outcome)
        }
        Command::Adapt { base, motions, out, log, iterations, lambda_p, lambda_k } => {
            let base_ckpt = Checkpoint::load(&base)?;
            let library = load_library(&motions, &cfg)?;
            let mut tcfg = cfg.adapt_cfg();
            if let Some(n) = iterations {
                tcfg.ppo.iterations = n;
            }
            if let Some(v) = lambda_p {
                tcfg.ppo.lambda_p = v;
            }
            if let Some(v) = lambda_k {
                tcfg.ppo.lambda_k = v;
            }
            let outcome = trainer::adapt_residual(&base_ckpt, &library, &tcfg, cli.seed)?;
            finish_training(&out, &log, outcome)
        }
        Command::Eval { ckpt, motions, mode, episodes, out, format } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let library = load_library(&motions, &cfg)?;
            let mode = ptbc_core::env::EvalMode::parse(mode.as_deref().unwrap_or(&cfg.eval.mode))?;
            let episodes = episodes.unwrap_or(cfg.eval.episodes_per_clip);
            let model = checkpoint.to_model();
            let report = evalkit::run_eval(
                &model.view(),
                &checkpoint.norm_actor,
                &checkpoint.model,
                &cfg.eval_env_cfg(mode),
                &library,
                episodes,
                cli.seed,
                &ckpt.display().to_string(),
            )?;
            let format = format.unwrap_or_else(|| cfg.eval.format.clone());
            match &out {
                Some(p) => evalkit::emit_report(&report, &format, p)?,
                None => println!("{}", evalkit::report_to_json(&report)),
            }
            eprintln!(
                "Succ {:.2}% | E_mpjpe {:.4} | E_mpkpe {:.4} | E_vel {:.4} | Slip {:.4} | E_mpd {:.4}",
                report.aggregate.succ.mean,
                report.aggregate.e_mpjpe.mean,
                report.aggregate.e_mpkpe.mean,
                report.aggregate.e_vel.mean,
                report.aggregate.slip.mean,
                report.aggregate.e_mpd.mean
            );
            Ok(())
        }
        Command::Verify { ckpt, motions, states, pairs, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let library = match &motions {
                Some(dir) => Some(load_library(dir, &cfg)?),
                None => None,
            };
            let report = evalkit::verify_propositions(
                &checkpoint,
                library.as_ref(),
                states,
                pairs,
                cli.seed,
                &ckpt.display().to_string(),
            )?;
            let text = serde_json::to_string_pretty(&report).expect("report serialization");
            match &out {
                Some(p) => std::fs::write(p, &text)?,
                None => println!("{text}"),
            }
            eprintln!(
                "lipschitz: empirical {:.4} <= bound {:.4}: {} | residual bound: max violation {:.2e}: {}",
                report.lipschitz.empirical,
                report.lipschitz.bound,
                if report.lipschitz.pass { "pass" } else { "FAIL" },
                report.residual_bound.max_violation,
                if report.residual_bound.pass { "pass" } else { "FAIL" }
            );
            if !report.lipschitz.pass || !report.residual_bound.pass {
                return Err(Error::Numerical("bound verification failed".into()));
            }
            Ok(())
        }
        Command::Replay { ckpt, clip, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let clip = motion_io::read_clip(&clip)?;
            let model = checkpoint.to_model();
            let dump = evalkit::replay_trajectory(
                &model.view(),
                &checkpoint.norm_actor,
                &checkpoint.model,
                &checkpoint.env_cfg,
                &clip,
                cli.seed,
            )?;
            evalkit::write_trajectory_csv(&dump, &out)?;
            eprintln!("wrote {} control steps to {}", dump.rows.len(), out.display());
            Ok(())
        }
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn curate_one(
    path: &Path,
    cfg: &RunConfig,
    speed: Option<f64>,
    perturb: Option<(usize, f64)>,
    clearance: Option<f64>,
    contact_thresh: f64,
) -> Result<ptbc_core::motion::MotionClip> {
    let mut clip = motion_io::read_clip(path)?;
    let model = &cfg.model;
    clip = motion::fk_fill(&clip, model)?;
    if let Some(f) = speed {
        clip = motion::augment_speed(&clip, f, model)?;
    }
    if let Some((joint, delta)) = perturb {
        let comp = if joint == 0 { vec![1] } else { vec![0] };
        clip = motion::augment_joint_perturb(&clip, joint, delta, &comp, model)?;
    }
    if let Some(c) = clearance {
        clip = motion::adjust_height(&clip, c);
    }
    // Balance-signal annotation feeds the contact rule, so it runs first.
    clip = motion::extract_com_cop(&clip, model)?;
    Ok(motion::estimate_contacts(&clip, contact_thresh))
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numerical(_) => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}
