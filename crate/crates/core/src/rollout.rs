//! Episode runner shared by scripted demos, evaluation and DQfD interaction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::encode_compact;
use crate::macro_exec::{MacroContext, MacroError};
use crate::model::{
    action_masks, validate_action, ActionType, AgentAction, DemoEpisode, DemoStep, EpisodeConfig,
    MacroResult, MacroStatus, ScreenRepresentation, Utterance, ARG_VOCAB,
};
use crate::net::{q_greedy_action, select_epsilon, valid_actions, greedy_action, NetDims, Network, NetOutput};
use crate::sim::{PixelGrid, SimEnv, SimError};

/// Macro steps allowed per episode.
pub const EPISODE_CAP: usize = 12;
/// Consecutive CANCELATION outcomes tolerated before one counts as a step.
pub const MAX_CANCELATIONS: u32 = 4;

pub trait Policy {
    fn act(&mut self, env: &SimEnv, screen: &ScreenRepresentation, utterance: &Utterance) -> AgentAction;
}

/// Executes the environment's shortest plan. With `noise_seed`, fields the
/// masks ignore are filled with random values, as a human demonstrator's
/// tooling would leave them.
pub struct OraclePolicy {
    rng: Option<ChaCha8Rng>,
}

impl OraclePolicy {
    pub fn new() -> Self {
        OraclePolicy { rng: None }
    }

    pub fn with_noise(seed: u64) -> Self {
        OraclePolicy {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Default for OraclePolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl Policy for OraclePolicy {
    fn act(&mut self, env: &SimEnv, screen: &ScreenRepresentation, _: &Utterance) -> AgentAction {
        let a = env.oracle_action(screen);
        let Some(rng) = self.rng.as_mut() else {
            return a;
        };
        let m = action_masks(a.action_type);
        let mut out = a;
        if m.element == 0 && !screen.elements.is_empty() {
            out.element_index = rng.random_range(0..screen.elements.len());
        }
        if m.arg == 0 {
            out.action_arg = rng.random_range(0..ARG_VOCAB);
        }
        out
    }
}

/// Uniform over valid actions.
pub struct RandomPolicy(ChaCha8Rng);

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _: &SimEnv, screen: &ScreenRepresentation, utterance: &Utterance) -> AgentAction {
        let acts = valid_actions(screen.elements.len(), utterance.phrases.len());
        acts[self.0.random_range(0..acts.len())]
    }
}

/// How a trained network turns its outputs into an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActingRule {
    /// Per-head argmax.
    Heads,
    /// Argmax of the factored Q over valid actions (or all triples).
    QValues { use_masks: bool },
}

impl ActingRule {
    pub fn pick(&self, out: &NetOutput) -> AgentAction {
        match *self {
            ActingRule::Heads => greedy_action(out),
            ActingRule::QValues { use_masks } => q_greedy_action(out, use_masks),
        }
    }
}

pub struct NetPolicy<'p> {
    net: Network<'p>,
    rule: ActingRule,
    epsilon: Option<(f64, ChaCha8Rng)>,
}

impl<'p> NetPolicy<'p> {
    pub fn new(dims: NetDims, params: &'p [f64], rule: ActingRule) -> Self {
        NetPolicy {
            net: Network::new(dims, params).expect("params match dims"),
            rule,
            epsilon: None,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64, seed: u64) -> Self {
        self.epsilon = Some((epsilon, ChaCha8Rng::seed_from_u64(seed)));
        self
    }

    pub fn decide(&mut self, screen: &ScreenRepresentation, utterance: &Utterance) -> AgentAction {
        let Ok(input) = encode_compact(screen, utterance) else {
            return AgentAction::global(ActionType::Wait);
        };
        let out = self.net.forward(&input);
        let rule = self.rule;
        match self.epsilon.as_mut() {
            Some((eps, rng)) => select_epsilon(&out, *eps, rng, |o| rule.pick(o)),
            None => rule.pick(&out),
        }
    }
}

impl Policy for NetPolicy<'_> {
    fn act(&mut self, _: &SimEnv, screen: &ScreenRepresentation, utterance: &Utterance) -> AgentAction {
        self.decide(screen, utterance)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub config: EpisodeConfig,
    pub steps: Vec<DemoStep>,
    /// Tick at which each step's perception was taken.
    pub perceived_at: Vec<u64>,
    pub success: bool,
    pub cancelations: u32,
    pub final_screen: ScreenRepresentation,
    pub final_frame: PixelGrid,
    pub rare_popups: u32,
}

impl Trajectory {
    /// Screen observed after step `i`.
    pub fn next_screen(&self, i: usize) -> &ScreenRepresentation {
        self.steps.get(i + 1).map_or(&self.final_screen, |s| &s.screen)
    }

    pub fn into_demo(self) -> DemoEpisode {
        DemoEpisode {
            config: self.config,
            steps: self.steps,
            success: self.success,
        }
    }

    /// Order-sensitive digest of the actions and outcomes.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for s in &self.steps {
            h.update(format!("{}|{:?}|{};", s.action, s.result.status, s.result.frames_consumed));
        }
        h.update([self.success as u8]);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] SimError),
    #[error(transparent)]
    Macro(#[from] MacroError),
}

/// Executes one agent decision taken on `screen`: one tick of decision
/// latency, the macro, then (unless canceled) waiting until perception has
/// caught up with the macro's end so no transitional frame is observed.
/// Invalid actions fail without touching the environment.
pub fn execute_step(env: &mut SimEnv, screen: &ScreenRepresentation, action: &AgentAction, utterance: &Utterance) -> Result<MacroResult, RolloutError> {
    env.step_frame()?;
    if validate_action(action, screen, utterance).is_err() {
        return Ok(MacroResult::failure(0));
    }
    let result = MacroContext::new(env, screen.clone())?.exec_macro(action, utterance)?;
    if result.status != MacroStatus::Cancelation {
        let end = env.tick()?;
        while env.perceive()?.frame_id < end {
            env.step_frame()?;
        }
    }
    Ok(result)
}

/// Runs one episode of at most `cap` recorded steps. CANCELATION outcomes
/// are not recorded; the policy decides again on a fresh perception.
pub fn run_episode(env: &mut SimEnv, cfg: &EpisodeConfig, policy: &mut dyn Policy, cap: usize) -> Result<Trajectory, RolloutError> {
    let (_, utterance) = env.reset(cfg)?;
    let mut steps = Vec::new();
    let mut perceived_at = Vec::new();
    let mut cancelations = 0;
    let mut streak = 0;
    let mut success = env.is_success();
    while !success && steps.len() < cap {
        let screen = env.perceive()?;
        let action = policy.act(env, &screen, &utterance);
        let result = execute_step(env, &screen, &action, &utterance)?;
        if result.status == MacroStatus::Cancelation {
            cancelations += 1;
            streak += 1;
            if streak <= MAX_CANCELATIONS {
                continue;
            }
        }
        streak = 0;
        perceived_at.push(screen.frame_id);
        steps.push(DemoStep {
            screen,
            utterance: utterance.clone(),
            action,
            result,
        });
        success = env.is_success();
    }
    Ok(Trajectory {
        config: cfg.clone(),
        steps,
        perceived_at,
        success,
        cancelations,
        final_screen: env.perceive()?,
        final_frame: env.render_frame()?,
        rare_popups: env.rare_popups_shown(),
    })
}
