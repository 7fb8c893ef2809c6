//! One turn of the evaluate → collect → admit → retrain loop.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::EpisodeConfig;
use crate::persistence::{self, load_checkpoint, save_checkpoint, CorpusEntry, PersistError};
use crate::sim::{mix64, sample_config, AppRegistry, TaskKind};
use crate::train::{train, EnvSource, TrainConfig, TrainError, TrainedPolicy};

use super::{behavior_diff, checkpoint_id, evaluate, oracle_demo, Candidate, EvalReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub train: TrainConfig,
    pub task: TaskKind,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub checkpoint: String,
    pub pool_episodes: usize,
    pub pool_screenshots: usize,
    pub admitted: usize,
    pub rejected: usize,
    pub success_rate: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationState {
    pub iteration: usize,
    pub pool: Vec<CorpusEntry>,
    pub lineage: Vec<IterationRecord>,
    pub reports: Vec<EvalReport>,
    pub current: Option<TrainedPolicy>,
}

fn to_entry(c: Candidate) -> CorpusEntry {
    match c {
        Candidate::Episode(e) => CorpusEntry::episode(e),
        Candidate::Screenshot(s) => CorpusEntry::Screenshot(s),
    }
}

impl IterationState {
    /// Candidates that would be admitted: not already pooled and, once a
    /// checkpoint exists, changing the agent's behavior.
    pub fn admit(&self, candidates: Vec<Candidate>) -> (Vec<CorpusEntry>, usize) {
        let mut admitted: Vec<CorpusEntry> = Vec::new();
        let mut rejected = 0;
        for c in candidates {
            let differs = self.current.as_ref().is_none_or(|p| behavior_diff(p, &c));
            let entry = to_entry(c);
            if differs && !self.pool.contains(&entry) && !admitted.contains(&entry) {
                admitted.push(entry);
            } else {
                rejected += 1;
            }
        }
        (admitted, rejected)
    }

    pub fn last_report(&self) -> Option<&EvalReport> {
        self.reports.last()
    }
}

/// Admits `candidates`, retrains from scratch on the whole pool and
/// evaluates. Returns the next state and a one-line summary; `state` is left
/// untouched.
pub fn run_iteration(
    state: &IterationState,
    candidates: Vec<Candidate>,
    cfg: &LoopConfig,
    registry: &Arc<AppRegistry>,
) -> Result<(IterationState, String), TrainError> {
    let (admitted, rejected) = state.admit(candidates);
    let mut pool = state.pool.clone();
    pool.extend(admitted.iter().cloned());
    let (episodes, shots) = persistence::split_corpus(pool.clone());
    let task = cfg.task;
    let configs = |s: u64| -> EpisodeConfig { sample_config(registry, task, s) };
    let src = EnvSource {
        registry: registry.clone(),
        configs: &configs,
    };
    let (policy, _) = train(&episodes, &shots, Some(&src), &cfg.train)?;
    let report = evaluate(&policy, registry, task, cfg.eval_episodes, cfg.eval_seed);
    let record = IterationRecord {
        iteration: state.iteration + 1,
        checkpoint: checkpoint_id(&policy),
        pool_episodes: episodes.len(),
        pool_screenshots: shots.len(),
        admitted: admitted.len(),
        rejected,
        success_rate: report.success_rate,
        failures: report.failures.len(),
    };
    let summary = format!(
        "iteration {}: admitted {} rejected {} pool {}+{} success {:.1}% ({}/{}) checkpoint {}",
        record.iteration,
        record.admitted,
        record.rejected,
        record.pool_episodes,
        record.pool_screenshots,
        100.0 * report.success_rate,
        report.successes,
        report.episodes,
        record.checkpoint
    );
    let mut next = state.clone();
    next.iteration += 1;
    next.pool = pool;
    next.lineage.push(record);
    next.reports.push(report);
    next.current = Some(policy);
    Ok((next, summary))
}

/// Scripted stand-in for the human annotator: the oracle demonstrates up to
/// `max` recorded failures from their exact configurations.
pub fn oracle_annotate(registry: &Arc<AppRegistry>, report: &EvalReport, max: usize, seed: u64) -> Vec<Candidate> {
    report
        .failures
        .iter()
        .enumerate()
        .filter_map(|(i, f)| oracle_demo(registry, &f.config, mix64(seed, i as u64)).ok().flatten())
        .take(max)
        .map(Candidate::Episode)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    iteration: usize,
    lineage: Vec<IterationRecord>,
}

/// Writes `state.json`, `pool.jsonl`, `report-N.json` and `current.ckpt`.
pub fn save_state(dir: &Path, state: &IterationState) -> Result<(), PersistError> {
    let io = |source| PersistError::Io {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let sf = StateFile {
        iteration: state.iteration,
        lineage: state.lineage.clone(),
    };
    fs::write(dir.join("state.json"), serde_json::to_string_pretty(&sf).expect("state serializes")).map_err(io)?;
    persistence::save_demos(&dir.join("pool.jsonl"), &state.pool)?;
    for (i, r) in state.reports.iter().enumerate() {
        fs::write(dir.join(format!("report-{}.json", i + 1)), serde_json::to_string(r).expect("report serializes")).map_err(io)?;
    }
    if let Some(p) = &state.current {
        save_checkpoint(&dir.join("current.ckpt"), p)?;
    }
    Ok(())
}

/// Missing directory or files yield the initial state.
pub fn load_state(dir: &Path) -> Result<IterationState, PersistError> {
    let path = dir.join("state.json");
    if !path.exists() {
        return Ok(IterationState::default());
    }
    let io = |source| PersistError::Io {
        path: path.display().to_string(),
        source,
    };
    let sf: StateFile = serde_json::from_str(&fs::read_to_string(&path).map_err(io)?)
        .map_err(|e| PersistError::Malformed { line: 1, msg: e.to_string() })?;
    let pool_path = dir.join("pool.jsonl");
    let pool = if pool_path.exists() {
        persistence::load_demos(&pool_path)?
    } else {
        Vec::new()
    };
    let mut reports = Vec::new();
    for i in 1..=sf.iteration {
        let p = dir.join(format!("report-{i}.json"));
        let text = fs::read_to_string(&p).map_err(|source| PersistError::Io {
            path: p.display().to_string(),
            source,
        })?;
        reports.push(serde_json::from_str(&text).map_err(|e| PersistError::Malformed { line: 1, msg: e.to_string() })?);
    }
    let ckpt = dir.join("current.ckpt");
    let current = if ckpt.exists() { Some(load_checkpoint(&ckpt)?) } else { None };
    Ok(IterationState {
        iteration: sf.iteration,
        pool,
        lineage: sf.lineage,
        reports,
        current,
    })
}
