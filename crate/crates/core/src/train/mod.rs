//! Behavior cloning and DQfD trainers.

pub mod optim;
pub mod replay;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_demos, AugmentPolicy};
use crate::encoding::{encode_compact, CompactInput};
use crate::model::{DemoEpisode, DemoStep, EpisodeConfig, ScreenshotDemo};
use crate::net::{max_q, loss_bc, LossSpec, NetDims, NetError, Network, PolicyParams};
use crate::rollout::{run_episode, ActingRule, NetPolicy, RolloutError, Trajectory, EPISODE_CAP};
use crate::sim::{mix64, AppRegistry, SimEnv};
pub use optim::{cosine_lr, Optimizer, OptimizerKind};
pub use replay::{ReplayBuffer, ReplaySample, SampleKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Bc,
    Dqfd,
}

impl std::str::FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bc" => Ok(Algo::Bc),
            "dqfd" => Ok(Algo::Dqfd),
            _ => Err(format!("unknown algorithm {s:?} (expected bc or dqfd)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqfdConfig {
    pub gamma: f64,
    pub target_sync: usize,
    pub margin: f64,
    /// Weight on J_Q; 0 ablates the TD term.
    pub lambda_q: f64,
    pub lambda_e: f64,
    pub lambda_l2: f64,
    pub pretrain_steps: usize,
    pub interaction_episodes: usize,
    pub updates_per_episode: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub replay_capacity: usize,
    pub demo_ratio: f64,
}

impl Default for DqfdConfig {
    fn default() -> Self {
        DqfdConfig {
            gamma: 0.99,
            target_sync: 500,
            margin: 0.8,
            lambda_q: 1.0,
            lambda_e: 1.0,
            lambda_l2: 1e-5,
            pretrain_steps: 1000,
            interaction_episodes: 0,
            updates_per_episode: 4,
            eps_start: 0.1,
            eps_end: 0.01,
            replay_capacity: 50_000,
            demo_ratio: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algo: Algo,
    pub dims: NetDims,
    pub batch_size: usize,
    pub lr: f64,
    /// BC gradient steps. DQfD uses its own phase settings.
    pub steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub augment: Option<AugmentPolicy>,
    pub use_screenshot_demos: bool,
    pub use_loss_masks: bool,
    /// Steps between log records; 0 logs once per pass over the samples.
    pub log_every: usize,
    pub dqfd: DqfdConfig,
}

impl TrainConfig {
    pub fn new(algo: Algo, seed: u64) -> Self {
        TrainConfig {
            algo,
            dims: NetDims::default(),
            batch_size: 32,
            lr: 1e-3,
            steps: 1500,
            seed,
            optimizer: OptimizerKind::adam(),
            augment: None,
            use_screenshot_demos: true,
            use_loss_masks: true,
            log_every: 0,
            dqfd: DqfdConfig::default(),
        }
    }

    pub fn total_steps(&self) -> usize {
        match self.algo {
            Algo::Bc => self.steps,
            Algo::Dqfd => self.dqfd.pretrain_steps + self.dqfd.interaction_episodes * self.dqfd.updates_per_episode,
        }
    }

    pub fn acting_rule(&self) -> ActingRule {
        acting_rule(self.algo, self.use_loss_masks)
    }
}

pub fn acting_rule(algo: Algo, use_masks: bool) -> ActingRule {
    match algo {
        Algo::Bc => ActingRule::Heads,
        Algo::Dqfd => ActingRule::QValues { use_masks },
    }
}

/// Trained weights plus what is needed to act with them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPolicy {
    pub params: PolicyParams,
    pub algo: Algo,
    pub use_masks: bool,
}

impl TrainedPolicy {
    pub fn acting_rule(&self) -> ActingRule {
        acting_rule(self.algo, self.use_masks)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub phase: String,
    pub j_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub type_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub element_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arg_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_success: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_success: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub samples: usize,
    pub demo_episodes: usize,
    pub screenshot_samples: usize,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log records serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

/// A labeled state usable by either trainer.
#[derive(Clone, Debug)]
pub struct Sample {
    pub kind: SampleKind,
    pub input: Arc<CompactInput>,
    pub step: DemoStep,
}

fn encode_step(step: &DemoStep) -> Option<Arc<CompactInput>> {
    encode_compact(&step.screen, &step.utterance).ok().map(Arc::new)
}

/// Expands demo episodes (with augmentation when configured) and screenshot
/// demos into training samples.
pub fn corpus_episodes(demos: &[DemoEpisode], cfg: &TrainConfig) -> Vec<DemoEpisode> {
    match &cfg.augment {
        Some(p) => augment_demos(demos, p),
        None => demos.to_vec(),
    }
}

fn check_params(params: &[f64], dims: NetDims) -> Result<(), TrainError> {
    if let Some(i) = params.iter().position(|x| !x.is_finite()) {
        let layout = crate::net::Layout::new(dims)?;
        return Err(NetError::NonFiniteParam(layout.path_of(i)).into());
    }
    Ok(())
}

fn check_grad(grad: &[f64], dims: NetDims) -> Result<(), TrainError> {
    if let Some(i) = grad.iter().position(|x| !x.is_finite()) {
        let layout = crate::net::Layout::new(dims)?;
        return Err(NetError::NonFiniteGrad(layout.path_of(i)).into());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BcBatchLoss {
    pub total: f64,
    pub type_loss: f64,
    pub element_loss: f64,
    pub arg_loss: f64,
}

/// Mean masked cross-entropy over `batch`; accumulates the gradient of the
/// mean when `grad` is given.
pub fn bc_batch(net: &Network, batch: &[&Sample], use_masks: bool, grad: Option<&mut [f64]>) -> BcBatchLoss {
    let w = 1.0 / batch.len().max(1) as f64;
    let mut acc = BcBatchLoss::default();
    let mut grad = grad;
    for s in batch {
        let spec = LossSpec::Bc {
            target: s.step.action,
            use_masks,
        };
        let out = match grad.as_deref_mut() {
            Some(g) => net.loss_grad(&s.input, &[(w, spec)], g).1,
            None => net.forward(&s.input),
        };
        let l = loss_bc(&out, &s.step.action, use_masks);
        acc.total += w * l.total;
        acc.type_loss += w * l.type_loss;
        acc.element_loss += w * l.element_loss;
        acc.arg_loss += w * l.arg_loss;
    }
    acc
}

/// Samples of an episode corpus plus screenshots, in corpus order.
pub fn build_samples(episodes: &[DemoEpisode], screenshots: &[ScreenshotDemo]) -> Vec<Sample> {
    let mut out = Vec::new();
    for ep in episodes {
        for step in &ep.steps {
            if let Some(input) = encode_step(step) {
                out.push(Sample {
                    kind: SampleKind::DemoEpisode,
                    input,
                    step: step.clone(),
                });
            }
        }
    }
    for s in screenshots {
        if let Some(input) = encode_step(&s.step) {
            out.push(Sample {
                kind: SampleKind::ScreenshotDemo,
                input,
                step: s.step.clone(),
            });
        }
    }
    out
}

pub fn train_bc(demos: &[DemoEpisode], screenshots: &[ScreenshotDemo], cfg: &TrainConfig) -> Result<(TrainedPolicy, TrainLog), TrainError> {
    let episodes = corpus_episodes(demos, cfg);
    let shots: &[ScreenshotDemo] = if cfg.use_screenshot_demos { screenshots } else { &[] };
    let samples = build_samples(&episodes, shots);
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let init = PolicyParams::init(cfg.dims, mix64(cfg.seed, 1))?;
    let mut params = init.to_f64();
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, 2));
    let mut grad = vec![0.0; params.len()];
    let log_every = if cfg.log_every == 0 {
        samples.len().div_ceil(cfg.batch_size).max(1)
    } else {
        cfg.log_every
    };
    let mut log = TrainLog {
        samples: samples.len(),
        demo_episodes: episodes.len(),
        screenshot_samples: samples.iter().filter(|s| s.kind == SampleKind::ScreenshotDemo).count(),
        ..TrainLog::default()
    };
    let mut window = BcBatchLoss::default();
    let mut in_window = 0;
    for step in 0..cfg.steps {
        let batch: Vec<&Sample> = (0..cfg.batch_size)
            .map(|_| &samples[rng.random_range(0..samples.len())])
            .collect();
        grad.fill(0.0);
        let l = {
            let net = Network::new(cfg.dims, &params)?;
            bc_batch(&net, &batch, cfg.use_loss_masks, Some(&mut grad))
        };
        check_grad(&grad, cfg.dims)?;
        opt.step(&mut params, &grad, cosine_lr(cfg.lr, step, cfg.steps));
        check_params(&params, cfg.dims)?;
        window.total += l.total;
        window.type_loss += l.type_loss;
        window.element_loss += l.element_loss;
        window.arg_loss += l.arg_loss;
        in_window += 1;
        if (step + 1) % log_every == 0 || step + 1 == cfg.steps {
            let k = in_window as f64;
            log.records.push(LogRecord {
                step: step + 1,
                phase: "bc".into(),
                j_total: window.total / k,
                type_loss: Some(window.type_loss / k),
                element_loss: Some(window.element_loss / k),
                arg_loss: Some(window.arg_loss / k),
                ..LogRecord::default()
            });
            window = BcBatchLoss::default();
            in_window = 0;
        }
    }
    Ok((
        TrainedPolicy {
            params: PolicyParams::from_f64(cfg.dims, &params),
            algo: Algo::Bc,
            use_masks: cfg.use_loss_masks,
        },
        log,
    ))
}

/// Replay transitions of a demonstrated or interactive episode. The last
/// step of a successful episode is terminal with reward 1; an unsuccessful
/// demo's last step is terminal with reward 0.
pub fn episode_transitions(steps: &[DemoStep], success: bool, kind: SampleKind, final_next: Option<&CompactInput>) -> Vec<ReplaySample> {
    let inputs: Vec<Option<Arc<CompactInput>>> = steps.iter().map(encode_step).collect();
    let tail = final_next.map(|x| Arc::new(x.clone()));
    let mut out = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let Some(state) = inputs[i].clone() else { continue };
        let last = i + 1 == steps.len();
        let (reward, next) = if last {
            if success {
                (1.0, None)
            } else {
                (0.0, tail.clone())
            }
        } else {
            (0.0, inputs[i + 1].clone())
        };
        out.push(ReplaySample {
            kind,
            state,
            action: step.action,
            reward,
            next,
        });
    }
    out
}

pub fn trajectory_transitions(t: &Trajectory) -> Vec<ReplaySample> {
    let tail = encode_compact(&t.final_screen, &t.config.utterance).ok();
    episode_transitions(&t.steps, t.success, SampleKind::EnvEpisode, tail.as_ref())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DqfdLoss {
    pub total: f64,
    pub j_q: f64,
    pub j_e: f64,
    pub j_l2: f64,
}

/// Bootstrapped targets from the target network, memoized per next-state
/// allocation until the next sync.
#[derive(Default)]
pub struct TargetCache(HashMap<usize, f64>);

impl TargetCache {
    pub fn clear(&mut self) {
        self.0.clear();
    }

    fn max_q(&mut self, target: &Network, next: &Arc<CompactInput>, use_masks: bool) -> f64 {
        let key = Arc::as_ptr(next) as usize;
        *self
            .0
            .entry(key)
            .or_insert_with(|| max_q(&target.forward(next), use_masks).1)
    }
}

/// `J = λ_Q·J_Q + λ_E·J_E + λ_L2·J_L2` over a batch. J_Q averages over ENV and
/// DEMO samples, J_E over DEMO and SCREENSHOT samples.
pub fn dqfd_losses(
    net: &Network,
    target: &Network,
    batch: &[&ReplaySample],
    cfg: &DqfdConfig,
    use_masks: bool,
    cache: &mut TargetCache,
    params: &[f64],
    grad: Option<&mut [f64]>,
) -> DqfdLoss {
    let nq = batch.iter().filter(|s| s.kind.has_q_loss()).count();
    let ne = batch.iter().filter(|s| s.kind.has_classification_loss()).count();
    let wq = if nq > 0 { cfg.lambda_q / nq as f64 } else { 0.0 };
    let we = if ne > 0 { cfg.lambda_e / ne as f64 } else { 0.0 };
    let mut loss = DqfdLoss::default();
    let mut grad = grad;
    for s in batch {
        let mut terms = Vec::with_capacity(2);
        if s.kind.has_q_loss() {
            let y = s.reward
                + match &s.next {
                    Some(next) => cfg.gamma * cache.max_q(target, next, use_masks),
                    None => 0.0,
                };
            terms.push((
                wq,
                LossSpec::Td {
                    action: s.action,
                    target: y,
                    use_masks,
                },
            ));
        }
        if s.kind.has_classification_loss() {
            terms.push((
                we,
                LossSpec::Margin {
                    demo: s.action,
                    margin: cfg.margin,
                    use_masks,
                },
            ));
        }
        let values = match grad.as_deref_mut() {
            Some(g) => net.loss_grad(&s.state, &terms, g).0,
            None => {
                let out = net.forward(&s.state);
                terms.iter().map(|(_, t)| t.value(&out)).collect()
            }
        };
        for ((_, spec), v) in terms.iter().zip(values) {
            match spec {
                LossSpec::Td { .. } => loss.j_q += v / nq as f64,
                _ => loss.j_e += v / ne as f64,
            }
        }
    }
    loss.j_l2 = params.iter().map(|p| p * p).sum();
    if let Some(g) = grad {
        for (gi, p) in g.iter_mut().zip(params) {
            *gi += cfg.lambda_l2 * 2.0 * p;
        }
    }
    loss.total = cfg.lambda_q * loss.j_q + cfg.lambda_e * loss.j_e + cfg.lambda_l2 * loss.j_l2;
    loss
}

/// Where interaction episodes come from.
pub struct EnvSource<'a> {
    pub registry: Arc<AppRegistry>,
    pub configs: &'a dyn Fn(u64) -> EpisodeConfig,
}

pub fn demo_buffer(episodes: &[DemoEpisode], screenshots: &[ScreenshotDemo], capacity: usize) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(capacity);
    for ep in episodes {
        for t in episode_transitions(&ep.steps, ep.success, SampleKind::DemoEpisode, None) {
            buf.push(t);
        }
    }
    for s in screenshots {
        if let Some(state) = encode_step(&s.step) {
            buf.push(ReplaySample {
                kind: SampleKind::ScreenshotDemo,
                state,
                action: s.step.action,
                reward: 0.0,
                next: None,
            });
        }
    }
    buf
}

pub fn train_dqfd(
    demos: &[DemoEpisode],
    screenshots: &[ScreenshotDemo],
    env: Option<&EnvSource>,
    cfg: &TrainConfig,
) -> Result<(TrainedPolicy, TrainLog), TrainError> {
    let d = &cfg.dqfd;
    let episodes = corpus_episodes(demos, cfg);
    let shots: &[ScreenshotDemo] = if cfg.use_screenshot_demos { screenshots } else { &[] };
    let mut buf = demo_buffer(&episodes, shots, d.replay_capacity);
    if buf.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let init = PolicyParams::init(cfg.dims, mix64(cfg.seed, 1))?;
    let mut params = init.to_f64();
    let mut target = params.clone();
    let mut cache = TargetCache::default();
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, 2));
    let mut grad = vec![0.0; params.len()];
    let total = cfg.total_steps();
    let log_every = if cfg.log_every == 0 {
        buf.demo_len().div_ceil(cfg.batch_size).max(1)
    } else {
        cfg.log_every
    };
    let mut log = TrainLog {
        samples: buf.len(),
        demo_episodes: episodes.len(),
        screenshot_samples: buf.demo_samples().iter().filter(|s| s.kind == SampleKind::ScreenshotDemo).count(),
        ..TrainLog::default()
    };
    let mut window = (DqfdLoss::default(), 0usize);
    let mut step = 0usize;
    let mut update = |params: &mut Vec<f64>,
                      target: &mut Vec<f64>,
                      cache: &mut TargetCache,
                      buf: &ReplayBuffer,
                      rng: &mut ChaCha8Rng,
                      step: &mut usize,
                      log: &mut TrainLog,
                      phase: &str,
                      env_success: Option<f64>|
     -> Result<(), TrainError> {
        let batch = buf.sample(cfg.batch_size, d.demo_ratio, rng);
        grad.fill(0.0);
        let l = {
            let net = Network::new(cfg.dims, params)?;
            let tnet = Network::new(cfg.dims, target)?;
            dqfd_losses(&net, &tnet, &batch, d, cfg.use_loss_masks, cache, params, Some(&mut grad))
        };
        check_grad(&grad, cfg.dims)?;
        opt.step(params, &grad, cosine_lr(cfg.lr, *step, total));
        check_params(params, cfg.dims)?;
        *step += 1;
        if *step % d.target_sync == 0 {
            target.clone_from(params);
            cache.clear();
        }
        window.0.total += l.total;
        window.0.j_q += l.j_q;
        window.0.j_e += l.j_e;
        window.0.j_l2 += l.j_l2;
        window.1 += 1;
        if *step % log_every == 0 || *step == total {
            let k = window.1 as f64;
            log.records.push(LogRecord {
                step: *step,
                phase: phase.into(),
                j_total: window.0.total / k,
                j_q: Some(window.0.j_q / k),
                j_e: Some(window.0.j_e / k),
                j_l2: Some(window.0.j_l2 / k),
                env_success,
                ..LogRecord::default()
            });
            window = (DqfdLoss::default(), 0);
        }
        Ok(())
    };
    for _ in 0..d.pretrain_steps {
        update(&mut params, &mut target, &mut cache, &buf, &mut rng, &mut step, &mut log, "pretrain", None)?;
    }
    if let Some(src) = env {
        let mut sim = SimEnv::new(src.registry.clone());
        let mut wins = 0usize;
        for k in 0..d.interaction_episodes {
            let frac = if d.interaction_episodes > 1 {
                k as f64 / (d.interaction_episodes - 1) as f64
            } else {
                1.0
            };
            let eps = d.eps_start + (d.eps_end - d.eps_start) * frac;
            let ep_seed = mix64(cfg.seed, 0x1000 + k as u64);
            let config = (src.configs)(ep_seed);
            let traj = {
                let mut policy = NetPolicy::new(cfg.dims, &params, cfg.acting_rule()).with_epsilon(eps, ep_seed);
                run_episode(&mut sim, &config, &mut policy, EPISODE_CAP)
            };
            match traj {
                Ok(t) => {
                    wins += t.success as usize;
                    for s in trajectory_transitions(&t) {
                        buf.push(s);
                    }
                }
                Err(e) => log.records.push(LogRecord {
                    step,
                    phase: "interact".into(),
                    note: Some(format!("episode {k}: {e}")),
                    ..LogRecord::default()
                }),
            }
            let rate = wins as f64 / (k + 1) as f64;
            for _ in 0..d.updates_per_episode {
                update(&mut params, &mut target, &mut cache, &buf, &mut rng, &mut step, &mut log, "interact", Some(rate))?;
            }
        }
    }
    Ok((
        TrainedPolicy {
            params: PolicyParams::from_f64(cfg.dims, &params),
            algo: Algo::Dqfd,
            use_masks: cfg.use_loss_masks,
        },
        log,
    ))
}

pub fn train(
    demos: &[DemoEpisode],
    screenshots: &[ScreenshotDemo],
    env: Option<&EnvSource>,
    cfg: &TrainConfig,
) -> Result<(TrainedPolicy, TrainLog), TrainError> {
    match cfg.algo {
        Algo::Bc => train_bc(demos, screenshots, cfg),
        Algo::Dqfd => train_dqfd(demos, screenshots, env, cfg),
    }
}
