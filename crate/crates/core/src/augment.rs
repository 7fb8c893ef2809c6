//! Synthetic demonstrations from randomized irrelevant elements.
//!
//! Critical elements (the acted-on one, icons, navigation-tagged elements)
//! are never touched. Every other element independently gets a random text
//! vector and a jittered box. Element order is kept as recorded so action
//! indices stay valid.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::synthetic_text;
use crate::model::{BBox, DemoEpisode, DemoStep, ElementKind};
use crate::sim::mix64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub p_text: f64,
    pub p_bbox: f64,
    pub jitter: f64,
    pub copies: usize,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            p_text: 0.5,
            p_bbox: 0.8,
            jitter: 0.05,
            copies: 99,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn with_copies(copies: usize, seed: u64) -> Self {
        AugmentPolicy {
            copies,
            seed,
            ..Self::default()
        }
    }
}

fn acted_id(step: &DemoStep) -> Option<u32> {
    if !step.action.action_type.is_element_action() {
        return None;
    }
    step.screen.elements.get(step.action.element_index).map(|e| e.id)
}

/// `(critical, irrelevant)` element ids; together they partition the screen.
pub fn classify_elements(step: &DemoStep) -> (BTreeSet<u32>, BTreeSet<u32>) {
    let acted = acted_id(step);
    let mut critical = BTreeSet::new();
    let mut irrelevant = BTreeSet::new();
    for e in &step.screen.elements {
        if Some(e.id) == acted || e.kind == ElementKind::Icon || e.nav_tag.is_some() {
            critical.insert(e.id);
        } else {
            irrelevant.insert(e.id);
        }
    }
    (critical, irrelevant)
}

/// Offsets each coordinate by up to `±amount`, clamped to the unit square.
/// Retries until the box is valid and actually moved.
pub fn jitter_bbox<R: Rng + ?Sized>(b: &BBox, amount: f64, rng: &mut R) -> BBox {
    if amount <= 0.0 {
        return *b;
    }
    for _ in 0..64 {
        let mut off = || rng.random_range(-amount..amount);
        let (x0, y0, x1, y1) = (
            (b.x0 + off()).clamp(0.0, 1.0),
            (b.y0 + off()).clamp(0.0, 1.0),
            (b.x1 + off()).clamp(0.0, 1.0),
            (b.y1 + off()).clamp(0.0, 1.0),
        );
        if let Ok(j) = BBox::new(x0, y0, x1, y1) {
            if j != *b {
                return j;
            }
        }
    }
    *b
}

pub fn augment_step<R: Rng + ?Sized>(step: &DemoStep, policy: &AugmentPolicy, rng: &mut R) -> DemoStep {
    let (_, irrelevant) = classify_elements(step);
    let mut out = step.clone();
    for e in &mut out.screen.elements {
        if !irrelevant.contains(&e.id) {
            continue;
        }
        // Both draws happen regardless of outcome so the stream position
        // depends only on the screen.
        let text = rng.random::<f64>() < policy.p_text;
        let text_seed: u64 = rng.random();
        let bbox = rng.random::<f64>() < policy.p_bbox;
        if text {
            e.text = synthetic_text(text_seed);
        }
        if bbox {
            e.bbox = jitter_bbox(&e.bbox, policy.jitter, rng);
        }
    }
    out
}

pub fn augment_episode(ep: &DemoEpisode, policy: &AugmentPolicy, seed: u64) -> DemoEpisode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DemoEpisode {
        config: ep.config.clone(),
        steps: ep.steps.iter().map(|s| augment_step(s, policy, &mut rng)).collect(),
        success: ep.success,
    }
}

/// One corpus entry with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub episode: DemoEpisode,
    /// Index of the source episode in the input.
    pub source: usize,
    /// 0 for the original, `1..=copies` for synthetic ones.
    pub copy: usize,
}

impl Augmented {
    pub fn is_augmented(&self) -> bool {
        self.copy > 0
    }
}

pub fn copy_seed(policy_seed: u64, source: usize, copy: usize) -> u64 {
    mix64(mix64(policy_seed, source as u64), copy as u64)
}

/// Originals first, then `copies` augmentations of each episode in order.
pub fn augment_corpus(episodes: &[DemoEpisode], policy: &AugmentPolicy) -> Vec<Augmented> {
    let mut out: Vec<Augmented> = episodes
        .iter()
        .enumerate()
        .map(|(i, e)| Augmented {
            episode: e.clone(),
            source: i,
            copy: 0,
        })
        .collect();
    for (i, e) in episodes.iter().enumerate() {
        for c in 1..=policy.copies {
            out.push(Augmented {
                episode: augment_episode(e, policy, copy_seed(policy.seed, i, c)),
                source: i,
                copy: c,
            });
        }
    }
    out
}

pub fn augment_demos(episodes: &[DemoEpisode], policy: &AugmentPolicy) -> Vec<DemoEpisode> {
    augment_corpus(episodes, policy).into_iter().map(|a| a.episode).collect()
}
