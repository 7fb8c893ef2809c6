//! Randomized gradient checks over both loss families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{encode_compact, CompactInput};
use crate::model::{
    ActionType, AgentAction, BBox, ElementKind, ElementState, NavTag, ScreenRepresentation, UiElement,
    Utterance, UtteranceTemplate, ARG_VOCAB,
};
use crate::sim::mix64;

use super::{grad_check, valid_actions, GradCheck, LossSpec, NetDims, NetError, PolicyParams};

/// A random well-formed screen of `1..=max` elements.
pub fn random_screen<R: Rng + ?Sized>(rng: &mut R, max: usize) -> ScreenRepresentation {
    let n = rng.random_range(1..=max);
    let els = (0..n)
        .map(|i| {
            let kind = ElementKind::ALL[rng.random_range(0..ElementKind::ALL.len())];
            let x0 = rng.random_range(0.0..0.8);
            let y0 = rng.random_range(0.0..0.9);
            let bbox = BBox::new(x0, y0, x0 + rng.random_range(0.05..0.2), y0 + rng.random_range(0.02..0.1)).expect("inside unit square");
            let mut e = UiElement::new(i as u32, kind, format!("w{} x{}", rng.random_range(0..50), rng.random_range(0..50)), bbox);
            if kind.is_toggle() && rng.random_bool(0.5) {
                e = e.with_state(ElementState::Checked);
            }
            if matches!(kind, ElementKind::Icon | ElementKind::Button) && rng.random_bool(0.3) {
                e = e.with_nav(NavTag::ALL[rng.random_range(0..NavTag::ALL.len())]);
            }
            e
        })
        .collect();
    ScreenRepresentation::new(els, 0).expect("generated screen is valid")
}

pub fn random_utterance<R: Rng + ?Sized>(rng: &mut R) -> Utterance {
    let k = rng.random_range(1..=3);
    let phrases = (0..k).map(|i| format!("phrase {i} {}", rng.random_range(0..100))).collect();
    let t = if rng.random_bool(0.5) {
        UtteranceTemplate::SearchFor
    } else {
        UtteranceTemplate::Install
    };
    Utterance::new(t, phrases).expect("phrase count in range")
}

/// A random valid action, with masked fields left random.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R, n: usize, phrases: usize) -> AgentAction {
    let acts = valid_actions(n, phrases);
    let mut a = acts[rng.random_range(0..acts.len())];
    if !a.action_type.is_element_action() {
        a.element_index = rng.random_range(0..n);
    }
    if a.action_type == ActionType::Click {
        a.action_arg = rng.random_range(0..ARG_VOCAB);
    }
    a
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub input: CompactInput,
    pub terms: Vec<(f64, LossSpec)>,
    pub params: Vec<f64>,
    pub dqfd: bool,
}

/// Instance `i`: even indices use the BC loss, odd ones TD plus margin.
pub fn instance(dims: NetDims, seed: u64, i: usize) -> Result<Instance, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, i as u64));
    let screen = random_screen(&mut rng, 8);
    let u = random_utterance(&mut rng);
    let input = encode_compact(&screen, &u).expect("small screen");
    let use_masks = rng.random_bool(0.75);
    let a = random_action(&mut rng, screen.len(), u.phrases.len());
    let dqfd = i % 2 == 1;
    let terms = if dqfd {
        vec![
            (1.0, LossSpec::Td { action: a, target: rng.random_range(-1.0..1.0), use_masks }),
            (1.0, LossSpec::Margin { demo: a, margin: 0.8, use_masks }),
        ]
    } else {
        vec![(1.0, LossSpec::Bc { target: a, use_masks })]
    };
    let params = PolicyParams::init(dims, rng.random())?.to_f64();
    Ok(Instance { input, terms, params, dqfd })
}

/// Checks `instances` random problems on `dims`, `coords` coordinates each.
pub fn gradcheck_suite(dims: NetDims, instances: usize, coords: usize, seed: u64) -> Result<Vec<(bool, GradCheck)>, NetError> {
    (0..instances)
        .map(|i| {
            let inst = instance(dims, seed, i)?;
            let g = grad_check(dims, &inst.params, &inst.input, &inst.terms, coords, mix64(seed, 1000 + i as u64))?;
            Ok((inst.dqfd, g))
        })
        .collect()
}
