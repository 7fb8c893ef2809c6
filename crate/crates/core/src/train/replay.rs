use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::CompactInput;
use crate::model::AgentAction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SampleKind {
    EnvEpisode,
    DemoEpisode,
    ScreenshotDemo,
}

impl SampleKind {
    pub fn has_q_loss(self) -> bool {
        self != SampleKind::ScreenshotDemo
    }

    pub fn has_classification_loss(self) -> bool {
        self != SampleKind::EnvEpisode
    }

    pub fn is_demo(self) -> bool {
        self != SampleKind::EnvEpisode
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySample {
    pub kind: SampleKind,
    pub state: Arc<CompactInput>,
    pub action: AgentAction,
    pub reward: f64,
    /// `None` for terminal transitions and screenshot demos.
    pub next: Option<Arc<CompactInput>>,
}

/// Demo-kind samples are kept forever; environment samples live in a ring
/// of `capacity` entries.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    demo: Vec<ReplaySample>,
    env: VecDeque<ReplaySample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            demo: Vec::new(),
            env: VecDeque::new(),
        }
    }

    pub fn push(&mut self, s: ReplaySample) {
        if s.kind.is_demo() {
            self.demo.push(s);
            return;
        }
        if self.capacity == 0 {
            return;
        }
        if self.env.len() == self.capacity {
            self.env.pop_front();
        }
        self.env.push_back(s);
    }

    pub fn demo_len(&self) -> usize {
        self.demo.len()
    }

    pub fn env_len(&self) -> usize {
        self.env.len()
    }

    pub fn len(&self) -> usize {
        self.demo.len() + self.env.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn env_samples(&self) -> impl Iterator<Item = &ReplaySample> {
        self.env.iter()
    }

    pub fn demo_samples(&self) -> &[ReplaySample] {
        &self.demo
    }

    /// `round(batch·ratio)` demo-kind samples, the rest from the environment
    /// partition; an empty partition is backfilled from the other. Uniform
    /// with replacement within each partition.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, demo_ratio: f64, rng: &mut R) -> Vec<&ReplaySample> {
        let mut n_demo = (batch as f64 * demo_ratio).round() as usize;
        if self.env.is_empty() {
            n_demo = batch;
        } else if self.demo.is_empty() {
            n_demo = 0;
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..n_demo {
            out.push(&self.demo[rng.random_range(0..self.demo.len())]);
        }
        for _ in n_demo..batch {
            out.push(&self.env[rng.random_range(0..self.env.len())]);
        }
        out
    }
}
