//! Evaluate, collect demos for failures, admit behavior-changing ones,
//! retrain.

pub mod iterate;
pub mod session;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::encode_compact;
use crate::model::{DemoEpisode, EpisodeConfig, ScreenRepresentation, ScreenshotDemo};
use crate::net::Network;
use crate::rollout::{run_episode, NetPolicy, OraclePolicy, Policy, RolloutError, EPISODE_CAP};
use crate::sim::{mix64, sample_config, AppRegistry, PixelGrid, SimEnv, TaskKind};
use crate::train::TrainedPolicy;

pub use iterate::{load_state, oracle_annotate, run_iteration, save_state, IterationRecord, IterationState, LoopConfig};
pub use session::{Session, SessionError, SessionManager, SessionState};

/// Short stable identifier of a parameter set.
pub fn checkpoint_id(p: &TrainedPolicy) -> String {
    let mut h = Sha256::new();
    for x in &p.params.data {
        h.update(x.to_le_bytes());
    }
    h.update(format!("{:?}|{}", p.algo, p.use_masks));
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub config: EpisodeConfig,
    pub trajectory_digest: String,
    pub steps: usize,
    pub final_screen: ScreenRepresentation,
    pub final_frame: PixelGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub failures: Vec<FailureRecord>,
}

/// The `i`-th evaluation configuration for `(task, seed)`.
pub fn eval_config(registry: &AppRegistry, task: TaskKind, seed: u64, i: usize) -> EpisodeConfig {
    sample_config(registry, task, mix64(seed, i as u64))
}

/// Runs `configs` under `policy`. Rollout errors count as failures.
pub fn evaluate_with(
    registry: &Arc<AppRegistry>,
    configs: &[EpisodeConfig],
    policy: &mut dyn Policy,
    checkpoint: &str,
) -> EvalReport {
    let mut env = SimEnv::new(registry.clone());
    let mut successes = 0;
    let mut failures = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        match run_episode(&mut env, cfg, policy, EPISODE_CAP) {
            Ok(t) if t.success => successes += 1,
            Ok(t) => failures.push(FailureRecord {
                id: format!("{checkpoint}-{i:04}"),
                config: cfg.clone(),
                trajectory_digest: t.digest(),
                steps: t.steps.len(),
                final_screen: t.final_screen,
                final_frame: t.final_frame,
            }),
            Err(_) => {}
        }
    }
    EvalReport {
        checkpoint: checkpoint.to_string(),
        episodes: configs.len(),
        successes,
        success_rate: successes as f64 / configs.len().max(1) as f64,
        failures,
    }
}

pub fn evaluate(policy: &TrainedPolicy, registry: &Arc<AppRegistry>, task: TaskKind, n: usize, seed: u64) -> EvalReport {
    let configs: Vec<EpisodeConfig> = (0..n).map(|i| eval_config(registry, task, seed, i)).collect();
    let params = policy.params.to_f64();
    let mut agent = NetPolicy::new(policy.params.dims, &params, policy.acting_rule());
    evaluate_with(registry, &configs, &mut agent, &checkpoint_id(policy))
}

/// Successful scripted-oracle episodes for configurations drawn from `seed`.
/// Masked action fields are filled with noise.
pub fn scripted_demos(registry: &Arc<AppRegistry>, task: TaskKind, n: usize, seed: u64) -> Result<Vec<DemoEpisode>, RolloutError> {
    let mut env = SimEnv::new(registry.clone());
    let mut out = Vec::with_capacity(n);
    let mut k = 0u64;
    while out.len() < n {
        let cfg = sample_config(registry, task, mix64(seed ^ 0xDE30, k));
        let t = run_episode(&mut env, &cfg, &mut OraclePolicy::with_noise(mix64(seed, k)), EPISODE_CAP)?;
        if t.success {
            out.push(t.into_demo());
        }
        k += 1;
    }
    Ok(out)
}

/// Scripted demos restricted to episodes in which no rare popup appeared.
pub fn scripted_demos_without_rare(registry: &Arc<AppRegistry>, task: TaskKind, n: usize, seed: u64) -> Result<Vec<DemoEpisode>, RolloutError> {
    let mut env = SimEnv::new(registry.clone());
    let mut out = Vec::with_capacity(n);
    let mut k = 0u64;
    while out.len() < n {
        let cfg = sample_config(registry, task, mix64(seed ^ 0xDE30, k));
        let t = run_episode(&mut env, &cfg, &mut OraclePolicy::with_noise(mix64(seed, k)), EPISODE_CAP)?;
        if t.success && t.rare_popups == 0 {
            out.push(t.into_demo());
        }
        k += 1;
    }
    Ok(out)
}

/// Records the oracle's element actions taken while a rare popup is up.
struct RareRecorder {
    oracle: OraclePolicy,
    seen: Vec<crate::model::DemoStep>,
}

impl Policy for RareRecorder {
    fn act(&mut self, env: &SimEnv, screen: &ScreenRepresentation, utterance: &crate::model::Utterance) -> crate::model::AgentAction {
        let a = self.oracle.act(env, screen, utterance);
        if env.on_rare_popup() && a.action_type.is_element_action() {
            self.seen.push(crate::model::DemoStep {
                screen: screen.clone(),
                utterance: utterance.clone(),
                action: a,
                result: crate::model::MacroResult::success(0),
            });
        }
        a
    }
}

/// Labeled screenshots of rare popups, as an annotator would produce from
/// failure screens.
pub fn scripted_rare_screenshots(registry: &Arc<AppRegistry>, task: TaskKind, n: usize, seed: u64) -> Result<Vec<ScreenshotDemo>, RolloutError> {
    let mut env = SimEnv::new(registry.clone());
    let mut out = Vec::with_capacity(n);
    let mut k = 0u64;
    while out.len() < n && k < 100 * n as u64 + 1000 {
        let cfg = sample_config(registry, task, mix64(seed ^ 0x5C4E, k));
        let mut rec = RareRecorder {
            oracle: OraclePolicy::with_noise(mix64(seed, k)),
            seen: Vec::new(),
        };
        run_episode(&mut env, &cfg, &mut rec, EPISODE_CAP)?;
        for step in rec.seen.into_iter().take(n - out.len()) {
            out.push(ScreenshotDemo {
                step,
                origin: format!("rare-{k}"),
            });
        }
        k += 1;
    }
    Ok(out)
}

/// Oracle demo for a specific configuration, if the oracle solves it.
pub fn oracle_demo(registry: &Arc<AppRegistry>, cfg: &EpisodeConfig, noise_seed: u64) -> Result<Option<DemoEpisode>, RolloutError> {
    let mut env = SimEnv::new(registry.clone());
    let t = run_episode(&mut env, cfg, &mut OraclePolicy::with_noise(noise_seed), EPISODE_CAP)?;
    Ok(t.success.then(|| t.into_demo()))
}

/// A demo or screenshot demo under admission review.
#[derive(Clone, Debug, PartialEq)]
pub enum Candidate {
    Episode(DemoEpisode),
    Screenshot(ScreenshotDemo),
}

/// True iff the agent's greedy choice differs from the demonstrated action
/// on at least one step, comparing only fields the masks keep.
pub fn behavior_diff(policy: &TrainedPolicy, demo: &Candidate) -> bool {
    let params = policy.params.to_f64();
    let net = Network::new(policy.params.dims, &params).expect("params match dims");
    let rule = policy.acting_rule();
    let steps: Vec<&crate::model::DemoStep> = match demo {
        Candidate::Episode(e) => e.steps.iter().collect(),
        Candidate::Screenshot(s) => vec![&s.step],
    };
    steps.iter().any(|s| match encode_compact(&s.screen, &s.utterance) {
        Ok(input) => !rule.pick(&net.forward(&input)).same_behavior(&s.action),
        Err(_) => true,
    })
}
