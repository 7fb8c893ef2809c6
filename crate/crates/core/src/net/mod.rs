//! Transformer pointer policy with action-type and argument heads.
//!
//! Encoder over present element rows (post-LN, no positional encoding), a
//! query from `[utterance ‖ mean of encoded elements]`, scaled dot-product
//! element scores, and two MLP heads reading `[attention context ‖ query]`.

pub mod check;
pub mod tape;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{CompactInput, ModelInput, D_E, D_U};
use crate::model::{
    action_masks, ActionType, AgentAction, ARG_VOCAB, MAX_ELEMENTS, NUM_ACTION_TYPES,
    SCROLL_DIRECTIONS,
};
use tape::{log_softmax, Mat, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub d_e: usize,
    pub d_u: usize,
    pub d_m: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub hidden: usize,
    pub n_types: usize,
    pub arg_vocab: usize,
    pub max_elements: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            d_e: D_E,
            d_u: D_U,
            d_m: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            hidden: 64,
            n_types: NUM_ACTION_TYPES,
            arg_vocab: ARG_VOCAB,
            max_elements: MAX_ELEMENTS,
        }
    }
}

impl NetDims {
    /// The tiny network used for gradient checks.
    pub fn small() -> Self {
        NetDims {
            d_m: 8,
            layers: 1,
            heads: 2,
            ff: 16,
            hidden: 8,
            ..NetDims::default()
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("non-finite parameter at {0}")]
    NonFiniteParam(String),
    #[error("non-finite gradient at {0}")]
    NonFiniteGrad(String),
    #[error("parameter count {found} does not match {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("heads ({heads}) must divide model width ({d_m})")]
    Heads { heads: usize, d_m: usize },
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(usize),
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
struct Segment {
    name: String,
    offset: usize,
    len: usize,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
struct LayerOff {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1g: usize,
    ln1b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2g: usize,
    ln2b: usize,
}

#[derive(Clone, Copy, Debug)]
struct HeadOff {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Parameter order in the flat vector. Checkpoints store exactly this order.
#[derive(Clone, Debug)]
pub struct Layout {
    dims: NetDims,
    segments: Vec<Segment>,
    in_w: usize,
    in_b: usize,
    layers: Vec<LayerOff>,
    q_w: usize,
    q_b: usize,
    type_head: HeadOff,
    arg_head: HeadOff,
    total: usize,
}

impl Layout {
    pub fn new(dims: NetDims) -> Result<Layout, NetError> {
        if dims.heads == 0 || dims.d_m % dims.heads != 0 {
            return Err(NetError::Heads {
                heads: dims.heads,
                d_m: dims.d_m,
            });
        }
        let mut segments = Vec::new();
        let mut total = 0;
        let mut seg = |name: String, len: usize, init: Init| {
            segments.push(Segment {
                name,
                offset: total,
                len,
                init,
            });
            total += len;
            total - len
        };
        let mut linear = |name: &str, din: usize, dout: usize| {
            let w = seg(format!("{name}.weight"), din * dout, Init::Uniform(din));
            let b = seg(format!("{name}.bias"), dout, Init::Uniform(din));
            (w, b)
        };
        let d = dims.d_m;
        let (in_w, in_b) = linear("input", dims.d_e, d);
        let mut layers = Vec::new();
        for l in 0..dims.layers {
            let (wq, bq) = linear(&format!("layer{l}.attn.q"), d, d);
            let (wk, bk) = linear(&format!("layer{l}.attn.k"), d, d);
            let (wv, bv) = linear(&format!("layer{l}.attn.v"), d, d);
            let (wo, bo) = linear(&format!("layer{l}.attn.out"), d, d);
            let (ln1g, ln1b) = (usize::MAX, usize::MAX);
            let (w1, b1) = linear(&format!("layer{l}.ff.in"), d, dims.ff);
            let (w2, b2) = linear(&format!("layer{l}.ff.out"), dims.ff, d);
            layers.push(LayerOff {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1g,
                ln1b,
                w1,
                b1,
                w2,
                b2,
                ln2g: usize::MAX,
                ln2b: usize::MAX,
            });
        }
        let (q_w, q_b) = linear("query", dims.d_u + d, d);
        let (t1w, t1b) = linear("type_head.hidden", 2 * d, dims.hidden);
        let (t2w, t2b) = linear("type_head.out", dims.hidden, dims.n_types);
        let (a1w, a1b) = linear("arg_head.hidden", 2 * d, dims.hidden);
        let (a2w, a2b) = linear("arg_head.out", dims.hidden, dims.arg_vocab);
        drop(linear);
        for (l, lo) in layers.iter_mut().enumerate() {
            lo.ln1g = seg(format!("layer{l}.norm1.gain"), d, Init::Ones);
            lo.ln1b = seg(format!("layer{l}.norm1.shift"), d, Init::Zeros);
            lo.ln2g = seg(format!("layer{l}.norm2.gain"), d, Init::Ones);
            lo.ln2b = seg(format!("layer{l}.norm2.shift"), d, Init::Zeros);
        }
        Ok(Layout {
            dims,
            segments,
            in_w,
            in_b,
            layers,
            q_w,
            q_b,
            type_head: HeadOff {
                w1: t1w,
                b1: t1b,
                w2: t2w,
                b2: t2b,
            },
            arg_head: HeadOff {
                w1: a1w,
                b1: a1b,
                w2: a2w,
                b2: a2b,
            },
            total,
        })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Human-readable name of parameter `i`, e.g. `layer1.ff.in.weight[37]`.
    pub fn path_of(&self, i: usize) -> String {
        match self.segments.iter().find(|s| i >= s.offset && i < s.offset + s.len) {
            Some(s) => format!("{}[{}]", s.name, i - s.offset),
            None => format!("<out of range {i}>"),
        }
    }

    /// `(offset, len)` of a named segment.
    pub fn segment(&self, name: &str) -> Option<(usize, usize)> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| (s.offset, s.len))
    }

    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.name.as_str())
    }
}

/// Network weights as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub dims: NetDims,
    pub data: Vec<f32>,
}

impl PolicyParams {
    /// Uniform `±sqrt(1/fan_in)` weights and biases, unit gains, zero shifts.
    pub fn init(dims: NetDims, seed: u64) -> Result<PolicyParams, NetError> {
        let layout = Layout::new(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0f32; layout.total];
        for s in &layout.segments {
            let slot = &mut data[s.offset..s.offset + s.len];
            match s.init {
                Init::Uniform(fan_in) => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    for x in slot {
                        *x = rng.random_range(-bound..bound) as f32;
                    }
                }
                Init::Ones => slot.fill(1.0),
                Init::Zeros => slot.fill(0.0),
            }
        }
        Ok(PolicyParams { dims, data })
    }

    pub fn from_f64(dims: NetDims, values: &[f64]) -> PolicyParams {
        PolicyParams {
            dims,
            data: values.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims).expect("params were built from valid dims")
    }

    pub fn check_finite(&self) -> Result<(), NetError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(NetError::NonFiniteParam(self.layout().path_of(i))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    /// Length `max_elements`; `-inf` beyond the present elements.
    pub element_scores: Vec<f64>,
    pub element_probs: Vec<f64>,
    pub context: Vec<f64>,
    pub type_logits: Vec<f64>,
    pub arg_logits: Vec<f64>,
    /// Number of present elements.
    pub n: usize,
    /// Phrase count of the utterance the input was built from.
    pub phrases: usize,
}

struct Graph {
    scores: Var,
    probs: Var,
    context: Var,
    type_logits: Var,
    arg_logits: Var,
}

/// Forward/backward over an `f64` parameter vector.
pub struct Network<'p> {
    layout: Layout,
    params: &'p [f64],
}

impl<'p> Network<'p> {
    pub fn new(dims: NetDims, params: &'p [f64]) -> Result<Self, NetError> {
        let layout = Layout::new(dims)?;
        if params.len() != layout.total {
            return Err(NetError::ParamCount {
                expected: layout.total,
                found: params.len(),
            });
        }
        Ok(Network { layout, params })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn build(&self, t: &mut Tape, input: &CompactInput) -> Graph {
        let dims = self.layout.dims;
        let d = dims.d_m;
        let n = input.len();
        let x = t.leaf(Mat::from_vec(n, dims.d_e, input.rows.clone()));
        let mut h = t.linear(x, self.layout.in_w, self.layout.in_b, d);
        let dh = d / dims.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        for lo in &self.layout.layers {
            let q = t.linear(h, lo.wq, lo.bq, d);
            let k = t.linear(h, lo.wk, lo.bk, d);
            let v = t.linear(h, lo.wv, lo.bv, d);
            let mut cat = None;
            for hd in 0..dims.heads {
                let qh = t.slice_cols(q, hd * dh, dh);
                let kh = t.slice_cols(k, hd * dh, dh);
                let vh = t.slice_cols(v, hd * dh, dh);
                let s = t.matmul_nt(qh, kh);
                let s = t.scale(s, inv);
                let p = t.softmax_rows(s);
                let o = t.matmul(p, vh);
                cat = Some(match cat {
                    None => o,
                    Some(c) => t.concat_cols(c, o),
                });
            }
            let a = t.linear(cat.expect("at least one head"), lo.wo, lo.bo, d);
            let r = t.add(h, a);
            let h1 = t.layer_norm(r, lo.ln1g, lo.ln1b);
            let f = t.linear(h1, lo.w1, lo.b1, dims.ff);
            let f = t.gelu(f);
            let f = t.linear(f, lo.w2, lo.b2, d);
            let r = t.add(h1, f);
            h = t.layer_norm(r, lo.ln2g, lo.ln2b);
        }
        let agg = t.mean_rows(h);
        let u = t.leaf(Mat::from_vec(1, dims.d_u, input.utterance.to_vec()));
        let qin = t.concat_cols(u, agg);
        let query = t.linear(qin, self.layout.q_w, self.layout.q_b, d);
        let raw = t.matmul_nt(query, h);
        let scores = t.scale(raw, 1.0 / (d as f64).sqrt());
        let probs = t.softmax_rows(scores);
        let context = t.matmul(probs, h);
        let z = t.concat_cols(context, query);
        let head = |t: &mut Tape, ho: &HeadOff, out: usize| {
            let hid = t.linear(z, ho.w1, ho.b1, dims.hidden);
            let hid = t.gelu(hid);
            t.linear(hid, ho.w2, ho.b2, out)
        };
        let type_logits = head(t, &self.layout.type_head, dims.n_types);
        let arg_logits = head(t, &self.layout.arg_head, dims.arg_vocab);
        Graph {
            scores,
            probs,
            context,
            type_logits,
            arg_logits,
        }
    }

    fn output(&self, t: &Tape, g: &Graph, input: &CompactInput) -> NetOutput {
        let n = input.len();
        let max = self.layout.dims.max_elements.max(n);
        let mut element_scores = vec![f64::NEG_INFINITY; max];
        element_scores[..n].copy_from_slice(&t.value(g.scores).data);
        let mut element_probs = vec![0.0; max];
        element_probs[..n].copy_from_slice(&t.value(g.probs).data);
        NetOutput {
            element_scores,
            element_probs,
            context: t.value(g.context).data.clone(),
            type_logits: t.value(g.type_logits).data.clone(),
            arg_logits: t.value(g.arg_logits).data.clone(),
            n,
            phrases: input.phrases,
        }
    }

    pub fn forward(&self, input: &CompactInput) -> NetOutput {
        let mut t = Tape::new(self.params);
        let g = self.build(&mut t, input);
        self.output(&t, &g, input)
    }

    pub fn forward_dense(&self, input: &ModelInput) -> NetOutput {
        self.forward(&input.compact())
    }

    /// Accumulates `Σ weight·∇term` into `grad` and returns each term's
    /// unweighted value.
    pub fn loss_grad(&self, input: &CompactInput, terms: &[(f64, LossSpec)], grad: &mut [f64]) -> (Vec<f64>, NetOutput) {
        let mut t = Tape::new(self.params);
        let g = self.build(&mut t, input);
        let out = self.output(&t, &g, input);
        let mut seeds = HeadGrads::zeros(&out);
        let values = terms.iter().map(|(w, spec)| spec.eval(&out, Some((&mut seeds, *w)))).collect();
        t.backward(
            &[
                (g.scores, &seeds.scores),
                (g.type_logits, &seeds.types),
                (g.arg_logits, &seeds.args),
            ],
            grad,
        );
        (values, out)
    }
}

/// Runs the network on a dense input after checking parameters.
pub fn forward(params: &PolicyParams, input: &ModelInput) -> Result<NetOutput, NetError> {
    params.check_finite()?;
    let values = params.to_f64();
    let net = Network::new(params.dims, &values)?;
    Ok(net.forward_dense(input))
}

/// Gradients of the three head outputs.
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub scores: Vec<f64>,
    pub types: Vec<f64>,
    pub args: Vec<f64>,
}

impl HeadGrads {
    fn zeros(out: &NetOutput) -> Self {
        HeadGrads {
            scores: vec![0.0; out.n],
            types: vec![0.0; out.type_logits.len()],
            args: vec![0.0; out.arg_logits.len()],
        }
    }
}

/// A per-sample loss term.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSpec {
    /// Masked cross-entropy over the three heads.
    Bc { target: AgentAction, use_masks: bool },
    /// Squared TD error `(target - Q(s, action))²`.
    Td { action: AgentAction, target: f64, use_masks: bool },
    /// Large-margin loss `max_a [Q(a) + m·[a ≠ demo]] - Q(demo)`.
    Margin { demo: AgentAction, margin: f64, use_masks: bool },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BcLoss {
    pub total: f64,
    pub type_loss: f64,
    /// Element term after masking.
    pub element_loss: f64,
    /// Argument term after masking.
    pub arg_loss: f64,
}

fn ce_grad(logits: &[f64], target: usize, scale: f64, dst: Option<&mut [f64]>) -> f64 {
    let ls = log_softmax(logits);
    if let Some(d) = dst {
        for (i, (g, l)) in d.iter_mut().zip(&ls).enumerate() {
            let y = if i == target { 1.0 } else { 0.0 };
            *g += scale * (l.exp() - y);
        }
    }
    -ls[target]
}

impl LossSpec {
    pub fn value(&self, out: &NetOutput) -> f64 {
        self.eval(out, None)
    }

    fn eval(&self, out: &NetOutput, grads: Option<(&mut HeadGrads, f64)>) -> f64 {
        match self {
            LossSpec::Bc { target, use_masks } => {
                let l = bc_terms(out, target, *use_masks, grads);
                l.total
            }
            LossSpec::Td {
                action,
                target,
                use_masks,
            } => {
                let q = q_of(out, action, *use_masks);
                let diff = q - target;
                if let Some((g, w)) = grads {
                    add_q_grad(out, action, *use_masks, 2.0 * diff * w, g);
                }
                diff * diff
            }
            LossSpec::Margin {
                demo,
                margin,
                use_masks,
            } => {
                let demo_key = action_key(demo, *use_masks);
                let q_demo = q_of(out, demo, *use_masks);
                let mut best = f64::NEG_INFINITY;
                let mut best_a = *demo;
                for (a, q) in enumerate_q(out, *use_masks) {
                    let v = q + if action_key(&a, *use_masks) == demo_key { 0.0 } else { *margin };
                    if v > best {
                        best = v;
                        best_a = a;
                    }
                }
                if let Some((g, w)) = grads {
                    add_q_grad(out, &best_a, *use_masks, w, g);
                    add_q_grad(out, demo, *use_masks, -w, g);
                }
                best - q_demo
            }
        }
    }
}

fn bc_terms(out: &NetOutput, target: &AgentAction, use_masks: bool, grads: Option<(&mut HeadGrads, f64)>) -> BcLoss {
    let m = action_masks(target.action_type);
    let (me, ma) = if use_masks {
        (m.element as f64, m.arg as f64)
    } else {
        (1.0, 1.0)
    };
    let scores = &out.element_scores[..out.n];
    let elem_target = if target.element_index < out.n { target.element_index } else { 0 };
    let (mut gt, mut ge, mut ga) = (None, None, None);
    let mut w = 0.0;
    if let Some((g, weight)) = grads {
        w = weight;
        gt = Some(&mut g.types[..]);
        ge = Some(&mut g.scores[..]);
        ga = Some(&mut g.args[..]);
    }
    let type_loss = ce_grad(&out.type_logits, target.action_type.index(), w, gt);
    let element_loss = if me == 0.0 || out.n == 0 {
        0.0
    } else {
        me * ce_grad(scores, elem_target, w * me, ge)
    };
    let arg_loss = if ma == 0.0 {
        0.0
    } else {
        ma * ce_grad(&out.arg_logits, target.action_arg.min(out.arg_logits.len() - 1), w * ma, ga)
    };
    BcLoss {
        total: type_loss + element_loss + arg_loss,
        type_loss,
        element_loss,
        arg_loss,
    }
}

/// Masked cross-entropy with its per-head breakdown.
pub fn loss_bc(out: &NetOutput, target: &AgentAction, use_masks: bool) -> BcLoss {
    bc_terms(out, target, use_masks, None)
}

fn action_key(a: &AgentAction, use_masks: bool) -> AgentAction {
    if use_masks {
        a.canonical()
    } else {
        *a
    }
}

/// `Q(e, t, a) = score[e]·mask_elem(t) + type[t] + arg[a]·mask_arg(t)`; with
/// masks disabled every term counts.
pub fn q_of(out: &NetOutput, a: &AgentAction, use_masks: bool) -> f64 {
    let m = action_masks(a.action_type);
    let (me, ma) = if use_masks { (m.element, m.arg) } else { (1, 1) };
    let mut q = out.type_logits[a.action_type.index()];
    if me == 1 {
        q += out.element_scores[a.element_index.min(out.n.saturating_sub(1))];
    }
    if ma == 1 {
        q += out.arg_logits[a.action_arg];
    }
    q
}

fn add_q_grad(out: &NetOutput, a: &AgentAction, use_masks: bool, d: f64, g: &mut HeadGrads) {
    let m = action_masks(a.action_type);
    let (me, ma) = if use_masks { (m.element, m.arg) } else { (1, 1) };
    g.types[a.action_type.index()] += d;
    if me == 1 && out.n > 0 {
        g.scores[a.element_index.min(out.n - 1)] += d;
    }
    if ma == 1 {
        g.args[a.action_arg] += d;
    }
}

/// Valid actions for a screen of `n` elements and `phrases` phrases, in
/// canonical form.
pub fn valid_actions(n: usize, phrases: usize) -> Vec<AgentAction> {
    let mut out = Vec::new();
    for t in ActionType::ALL {
        if t.is_element_action() {
            let args = match t {
                ActionType::FocusAndType => phrases.min(ARG_VOCAB),
                ActionType::Scroll => SCROLL_DIRECTIONS,
                _ => 1,
            };
            for e in 0..n {
                for a in 0..args {
                    out.push(AgentAction::new(e, t, a));
                }
            }
        } else {
            out.push(AgentAction::global(t));
        }
    }
    out
}

/// Action set the Q function ranges over: valid canonical actions, or every
/// raw triple when masks are disabled.
pub fn enumerate_q(out: &NetOutput, use_masks: bool) -> Vec<(AgentAction, f64)> {
    if use_masks {
        valid_actions(out.n, out.phrases)
            .into_iter()
            .map(|a| (a, q_of(out, &a, true)))
            .collect()
    } else {
        let mut v = Vec::with_capacity(out.n.max(1) * NUM_ACTION_TYPES * ARG_VOCAB);
        for t in ActionType::ALL {
            for e in 0..out.n.max(1) {
                for a in 0..out.arg_logits.len() {
                    let act = AgentAction::new(e, t, a);
                    v.push((act, q_of(out, &act, false)));
                }
            }
        }
        v
    }
}

/// Map from valid action to Q value.
pub fn q_values(out: &NetOutput) -> Vec<(AgentAction, f64)> {
    enumerate_q(out, true)
}

/// Max Q over the action set (ties resolve to the first enumerated action).
pub fn max_q(out: &NetOutput, use_masks: bool) -> (AgentAction, f64) {
    let mut best = (AgentAction::global(ActionType::Wait), f64::NEG_INFINITY);
    for (a, q) in enumerate_q(out, use_masks) {
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectMode {
    Greedy,
    Epsilon { epsilon: f64, seed: u64 },
}

/// Snaps an action onto the valid set: out-of-range arguments fall back to 0.
pub fn clamp_action(mut a: AgentAction, n: usize, phrases: usize) -> AgentAction {
    let limit = match a.action_type {
        ActionType::FocusAndType => phrases.min(ARG_VOCAB),
        ActionType::Scroll => SCROLL_DIRECTIONS,
        _ => ARG_VOCAB,
    };
    if a.action_arg >= limit {
        a.action_arg = 0;
    }
    if a.element_index >= n.max(1) {
        a.element_index = 0;
    }
    a
}

/// Head argmaxes (lowest index on ties).
pub fn greedy_action(out: &NetOutput) -> AgentAction {
    let e = argmax(&out.element_scores[..out.n.max(1).min(out.element_scores.len())]);
    let t = ActionType::from_index(argmax(&out.type_logits)).expect("type head size");
    let a = argmax(&out.arg_logits);
    clamp_action(AgentAction::new(e, t, a), out.n, out.phrases)
}

pub fn select_action(out: &NetOutput, mode: SelectMode) -> AgentAction {
    match mode {
        SelectMode::Greedy => greedy_action(out),
        SelectMode::Epsilon { epsilon, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            select_epsilon(out, epsilon, &mut rng, greedy_action)
        }
    }
}

/// With probability `epsilon` a uniformly random valid action, otherwise
/// `base(out)`.
pub fn select_epsilon<R: Rng + ?Sized>(
    out: &NetOutput,
    epsilon: f64,
    rng: &mut R,
    base: impl Fn(&NetOutput) -> AgentAction,
) -> AgentAction {
    if rng.random::<f64>() < epsilon {
        let acts = valid_actions(out.n.max(1), out.phrases);
        *acts.choose(rng).expect("WAIT is always valid")
    } else {
        base(out)
    }
}

/// Acting rule of Q-trained agents.
pub fn q_greedy_action(out: &NetOutput, use_masks: bool) -> AgentAction {
    clamp_action(max_q(out, use_masks).0, out.n, out.phrases)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: usize,
    pub checked: usize,
}

/// Relative-error floor: below this magnitude both gradients are treated as
/// absolute errors.
pub const GRADCHECK_FLOOR: f64 = 1e-3;
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Compares analytic gradients with central differences on up to `coords`
/// randomly chosen parameters.
pub fn grad_check(
    dims: NetDims,
    params: &[f64],
    input: &CompactInput,
    terms: &[(f64, LossSpec)],
    coords: usize,
    seed: u64,
) -> Result<GradCheck, NetError> {
    let net = Network::new(dims, params)?;
    let mut grad = vec![0.0; params.len()];
    net.loss_grad(input, terms, &mut grad);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(NetError::NonFiniteGrad(net.layout.path_of(i)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..params.len()).collect();
    if coords < idx.len() {
        rand::seq::SliceRandom::partial_shuffle(&mut idx[..], &mut rng, coords);
        idx.truncate(coords);
    }
    let mut p = params.to_vec();
    let loss_at = |p: &[f64]| {
        let n = Network::new(dims, p).expect("same shape");
        let out = n.forward(input);
        terms.iter().map(|(w, s)| w * s.eval(&out, None)).sum::<f64>()
    };
    let mut worst = 0;
    let mut max_rel = 0.0f64;
    for &i in &idx {
        let orig = p[i];
        p[i] = orig + GRADCHECK_STEP;
        let up = loss_at(&p);
        p[i] = orig - GRADCHECK_STEP;
        let down = loss_at(&p);
        p[i] = orig;
        let num = (up - down) / (2.0 * GRADCHECK_STEP);
        let a = grad[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(GRADCHECK_FLOOR);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        worst,
        checked: idx.len(),
    })
}
