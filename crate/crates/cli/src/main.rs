//! `uinav`: train, evaluate and iterate UI-navigation agents.
//!
//! Relative paths are resolved against `$UINAV_DATA_DIR` when it is set, and
//! app definitions in `$UINAV_DATA_DIR/apps/*.toml` replace or extend the
//! built-in apps.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use uinav_core::augment::{augment_corpus, AugmentPolicy};
use uinav_core::model::UtteranceTemplate;
use uinav_core::net::check::gradcheck_suite;
use uinav_core::net::NetDims;
use uinav_core::orchestrator::{
    evaluate, load_state, run_iteration, save_state, scripted_demos, scripted_demos_without_rare,
    scripted_rare_screenshots, Candidate, FailureRecord, LoopConfig, SessionManager,
};
use uinav_core::persistence::{
    load_checkpoint, load_demos, save_checkpoint, save_demos, split_corpus, CorpusEntry,
};
use uinav_core::sim::{sample_config, AppRegistry, SimApp, TaskKind};
use uinav_core::train::{train, Algo, EnvSource, TrainConfig};
use uinav_service::AppState;

pub const DATA_DIR_VAR: &str = "UINAV_DATA_DIR";

#[derive(Parser)]
#[command(name = "uinav", version, about = "UI-navigation agents trained from demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Bc,
    Dqfd,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Algo {
        match a {
            AlgoArg::Bc => Algo::Bc,
            AlgoArg::Dqfd => Algo::Dqfd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Search,
    Install,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Search => TaskKind::Search,
            TaskArg::Install => TaskKind::Install,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a demo corpus.
    Train {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        #[arg(long)]
        demos: PathBuf,
        /// Extra screenshot demos (screenshot records inside --demos are used too).
        #[arg(long)]
        screenshots: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        augment_copies: usize,
        #[arg(long)]
        no_masks: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// BC gradient steps, or DQfD pretraining steps.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// DQfD environment episodes after pretraining.
        #[arg(long, default_value_t = 0)]
        interaction_episodes: usize,
        /// Training log (one JSON record per line).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over seeded episodes.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        failures_out: Option<PathBuf>,
    },
    /// Write an augmented copy of a corpus.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 99)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve demo-collection sessions over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        failures: PathBuf,
        #[arg(long)]
        demos_out: PathBuf,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 500)]
        coords: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// One evaluate/admit/retrain iteration over a state directory.
    Iterate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long, value_enum, default_value = "dqfd")]
        algo: AlgoArg,
        #[arg(long, default_value_t = 0)]
        augment_copies: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        eval_episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Record scripted oracle demos.
    ScriptDemos {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Skip episodes in which a rare popup appeared.
        #[arg(long)]
        no_rare: bool,
        /// Also append this many labeled rare-popup screenshots.
        #[arg(long, default_value_t = 0)]
        rare_screenshots: usize,
    },
}

fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_VAR) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn registry() -> Result<Arc<AppRegistry>> {
    let mut reg = AppRegistry::builtin();
    if let Some(dir) = std::env::var_os(DATA_DIR_VAR) {
        let apps = Path::new(&dir).join("apps");
        if apps.is_dir() {
            let extra = AppRegistry::load_dir(&apps).with_context(|| format!("loading {}", apps.display()))?;
            for id in extra.ids() {
                let app: SimApp = (*extra.get(&id)?).clone();
                reg.remove(&id);
                reg.insert(app)?;
            }
        }
    }
    Ok(Arc::new(reg))
}

fn task_of(entries: &[CorpusEntry]) -> Option<TaskKind> {
    entries.iter().find_map(|e| match e {
        CorpusEntry::Episode { episode, .. } => Some(episode.config.utterance.template),
        CorpusEntry::Screenshot(s) => Some(s.step.utterance.template),
    }).map(|t| match t {
        UtteranceTemplate::SearchFor => TaskKind::Search,
        UtteranceTemplate::Install => TaskKind::Install,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            algo,
            demos,
            screenshots,
            augment_copies,
            no_masks,
            seed,
            out,
            steps,
            interaction_episodes,
            log,
        } => {
            let reg = registry()?;
            let mut entries = load_demos(&data_path(&demos))?;
            if let Some(s) = screenshots {
                entries.extend(load_demos(&data_path(&s))?);
            }
            let task = task_of(&entries).unwrap_or(TaskKind::Search);
            let (eps, shots) = split_corpus(entries);
            let mut cfg = TrainConfig::new(algo.into(), seed);
            cfg.steps = steps;
            cfg.dqfd.pretrain_steps = steps;
            cfg.dqfd.interaction_episodes = interaction_episodes;
            cfg.use_loss_masks = !no_masks;
            if augment_copies > 0 {
                cfg.augment = Some(AugmentPolicy::with_copies(augment_copies, seed));
            }
            let configs = |s: u64| sample_config(&reg, task, s);
            let src = EnvSource {
                registry: reg.clone(),
                configs: &configs,
            };
            let (policy, tlog) = train(&eps, &shots, Some(&src), &cfg)?;
            save_checkpoint(&data_path(&out), &policy)?;
            if let Some(l) = log {
                std::fs::write(data_path(&l), tlog.to_jsonl())?;
            }
            let last = tlog.records.last().map_or(f64::NAN, |r| r.j_total);
            println!(
                "trained {:?} on {} samples ({} episodes, {} screenshots); final loss {last:.6}",
                cfg.algo, tlog.samples, tlog.demo_episodes, tlog.screenshot_samples
            );
        }
        Command::Eval {
            ckpt,
            task,
            episodes,
            seed,
            failures_out,
        } => {
            let reg = registry()?;
            let policy = load_checkpoint(&data_path(&ckpt))?;
            let report = evaluate(&policy, &reg, task.into(), episodes as usize, seed);
            if let Some(f) = failures_out {
                let mut text = String::new();
                for r in &report.failures {
                    text.push_str(&serde_json::to_string(r)?);
                    text.push('\n');
                }
                std::fs::write(data_path(&f), text)?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": report.checkpoint,
                    "episodes": report.episodes,
                    "successes": report.successes,
                    "success_rate": report.success_rate,
                })
            );
        }
        Command::Augment {
            input,
            out,
            copies,
            seed,
        } => {
            let entries = load_demos(&data_path(&input))?;
            let (eps, _) = split_corpus(entries.clone());
            let aug = augment_corpus(&eps, &AugmentPolicy::with_copies(copies, seed));
            let (mut outv, shots): (Vec<CorpusEntry>, Vec<CorpusEntry>) =
                entries.into_iter().partition(|e| matches!(e, CorpusEntry::Episode { .. }));
            outv.extend(aug.into_iter().filter(|a| a.is_augmented()).map(|a| CorpusEntry::Episode {
                episode: a.episode,
                augmented: true,
                source: Some(format!("episode-{}", a.source)),
            }));
            outv.extend(shots);
            save_demos(&data_path(&out), &outv)?;
            println!("wrote {} records", outv.len());
        }
        Command::Serve {
            port,
            failures,
            demos_out,
        } => {
            let reg = registry()?;
            let text = std::fs::read_to_string(data_path(&failures)).with_context(|| format!("reading {}", failures.display()))?;
            let mut list = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: FailureRecord = serde_json::from_str(line).with_context(|| format!("{} line {}", failures.display(), i + 1))?;
                list.push(r);
            }
            let state = AppState::new(SessionManager::new(reg, list), data_path(&demos_out));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(uinav_service::serve(SocketAddr::from(([127, 0, 0, 1], port)), state, |a| {
                println!("listening on {a}");
            }))?;
        }
        Command::Gradcheck { instances, coords, seed } => {
            let res = gradcheck_suite(NetDims::small(), instances, coords, seed)?;
            let worst = res.iter().map(|(_, g)| g.max_rel_error).fold(0.0, f64::max);
            for (i, (dqfd, g)) in res.iter().enumerate() {
                println!(
                    "instance {i:2} {:4} max rel error {:.3e} over {} coords",
                    if *dqfd { "dqfd" } else { "bc" },
                    g.max_rel_error,
                    g.checked
                );
            }
            println!("max relative error {worst:.3e}");
            if worst >= 1e-4 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Iterate {
            state,
            demos,
            task,
            algo,
            augment_copies,
            steps,
            eval_episodes,
            seed,
        } => {
            let reg = registry()?;
            let dir = data_path(&state);
            let st = load_state(&dir)?;
            let entries = load_demos(&data_path(&demos))?;
            let task = match task.map(TaskKind::from).or_else(|| task_of(&entries)).or_else(|| task_of(&st.pool)) {
                Some(t) => t,
                None => bail!("cannot infer the task; pass --task"),
            };
            let candidates = entries
                .into_iter()
                .map(|e| match e {
                    CorpusEntry::Episode { episode, .. } => Candidate::Episode(episode),
                    CorpusEntry::Screenshot(s) => Candidate::Screenshot(s),
                })
                .collect();
            let mut cfg = TrainConfig::new(algo.into(), seed);
            cfg.steps = steps;
            cfg.dqfd.pretrain_steps = steps;
            if augment_copies > 0 {
                cfg.augment = Some(AugmentPolicy::with_copies(augment_copies, seed));
            }
            let lc = LoopConfig {
                train: cfg,
                task,
                eval_episodes: eval_episodes as usize,
                eval_seed: seed,
            };
            let (next, summary) = run_iteration(&st, candidates, &lc, &reg)?;
            save_state(&dir, &next)?;
            println!("{summary}");
        }
        Command::ScriptDemos {
            task,
            count,
            seed,
            out,
            no_rare,
            rare_screenshots,
        } => {
            let reg = registry()?;
            let eps = if no_rare {
                scripted_demos_without_rare(&reg, task.into(), count, seed)?
            } else {
                scripted_demos(&reg, task.into(), count, seed)?
            };
            let mut entries: Vec<CorpusEntry> = eps.into_iter().map(CorpusEntry::episode).collect();
            if rare_screenshots > 0 {
                let shots = scripted_rare_screenshots(&reg, task.into(), rare_screenshots, seed)?;
                entries.extend(shots.into_iter().map(CorpusEntry::Screenshot));
            }
            save_demos(&data_path(&out), &entries)?;
            println!("wrote {} records", entries.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
