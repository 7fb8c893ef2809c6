//! Fixed-shape numeric inputs from screens and utterances.
//!
//! Element row layout (`D_E = 64`):
//!
//! | offset | width | content                                  |
//! |--------|-------|------------------------------------------|
//! | 0      | 7     | kind one-hot                             |
//! | 7      | 4     | state one-hot                            |
//! | 11     | 7     | nav tag one-hot, last slot = no tag      |
//! | 18     | 4     | bbox `x0, y0, x1, y1`                    |
//! | 22     | 42    | text embedding                           |
//!
//! Utterance layout (`D_U = 48`): template one-hot (2), phrase-0 embedding
//! (42), phrase count / 8 (1), zero padding (3).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    ElementKind, ElementState, NavTag, ScreenRepresentation, UiElement, Utterance, MAX_ELEMENTS,
    MAX_PHRASES,
};
use crate::sim::grid::fnv1a;

/// Bumped whenever the layout below changes; checkpoints record it.
pub const ENCODING_VERSION: u32 = 1;

pub const TEXT_DIM: usize = 42;
pub const D_E: usize = 64;
pub const D_U: usize = 48;

pub const KIND_OFF: usize = 0;
pub const STATE_OFF: usize = KIND_OFF + ElementKind::ALL.len();
pub const NAV_OFF: usize = STATE_OFF + ElementState::ALL.len();
pub const BBOX_OFF: usize = NAV_OFF + NavTag::ALL.len() + 1;
pub const TEXT_OFF: usize = BBOX_OFF + 4;

pub const HASH_SEED: u64 = 0x7A11_5EED;

/// Prefix of synthetic texts produced by augmentation. The rest of the
/// string is 16 hex digits seeding the replacement vector.
pub const SYNTHETIC_PREFIX: &str = "\u{0}rnd:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{0} elements exceed the limit of {MAX_ELEMENTS}")]
    TooManyElements(usize),
}

pub fn tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Bucket and sign of one token.
pub fn token_slot(token: &str) -> (usize, f64) {
    let h = fnv1a(token.as_bytes(), HASH_SEED);
    let h = h ^ (h >> 29);
    let sign = if (h >> 40) & 1 == 0 { 1.0 } else { -1.0 };
    ((h % TEXT_DIM as u64) as usize, sign)
}

/// Number of signed hash buckets a token can land in.
pub const TEXT_BUCKETS: usize = 2 * TEXT_DIM;

/// Signed bucket of a token: tokens sharing one have identical embeddings.
pub fn text_bucket(token: &str) -> usize {
    let (i, sign) = token_slot(token);
    2 * i + (sign < 0.0) as usize
}

pub fn synthetic_text(seed: u64) -> String {
    format!("{SYNTHETIC_PREFIX}{seed:016x}")
}

pub fn is_synthetic(s: &str) -> bool {
    s.starts_with(SYNTHETIC_PREFIX)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Hashed bag-of-words, L2-normalized. Synthetic texts map to a seeded
/// random unit vector instead.
pub fn embed_text(s: &str) -> [f64; TEXT_DIM] {
    let mut v = [0.0; TEXT_DIM];
    if let Some(hex) = s.strip_prefix(SYNTHETIC_PREFIX) {
        if let Ok(seed) = u64::from_str_radix(hex, 16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for x in &mut v {
                *x = rng.random_range(-1.0..1.0);
            }
            normalize(&mut v);
            return v;
        }
    }
    for t in tokens(s) {
        let (i, sign) = token_slot(&t);
        v[i] += sign;
    }
    normalize(&mut v);
    v
}

pub fn encode_element(e: &UiElement) -> [f64; D_E] {
    let mut row = [0.0; D_E];
    row[KIND_OFF + e.kind.index()] = 1.0;
    row[STATE_OFF + e.state.index()] = 1.0;
    match e.nav_tag {
        Some(tag) => row[NAV_OFF + tag.index()] = 1.0,
        None => row[NAV_OFF + NavTag::ALL.len()] = 1.0,
    }
    row[BBOX_OFF..BBOX_OFF + 4].copy_from_slice(&e.bbox.as_array());
    row[TEXT_OFF..].copy_from_slice(&embed_text(&e.text));
    row
}

pub fn encode_utterance(u: &Utterance) -> [f64; D_U] {
    let mut v = [0.0; D_U];
    v[u.template.index()] = 1.0;
    if let Some(p) = u.phrases.first() {
        v[2..2 + TEXT_DIM].copy_from_slice(&embed_text(p));
    }
    v[2 + TEXT_DIM] = u.phrases.len() as f64 / MAX_PHRASES as f64;
    v
}

/// Network input. Rows beyond `len()` are zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `MAX_ELEMENTS × D_E`, row-major.
    pub element_matrix: Vec<f64>,
    pub presence_mask: [u8; MAX_ELEMENTS],
    pub utterance_vec: [f64; D_U],
    /// Phrase count, which bounds valid FOCUS_AND_TYPE arguments.
    pub phrases: usize,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.presence_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The present rows only.
    pub fn present_rows(&self) -> &[f64] {
        &self.element_matrix[..self.len() * D_E]
    }

    pub fn compact(&self) -> CompactInput {
        CompactInput {
            rows: self.present_rows().to_vec(),
            utterance: self.utterance_vec,
            phrases: self.phrases,
        }
    }
}

/// Present rows only; what training stores and the network consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactInput {
    pub rows: Vec<f64>,
    pub utterance: [f64; D_U],
    pub phrases: usize,
}

impl CompactInput {
    pub fn len(&self) -> usize {
        self.rows.len() / D_E
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn encode_screen(s: &ScreenRepresentation, u: &Utterance) -> Result<ModelInput, EncodeError> {
    if s.elements.len() > MAX_ELEMENTS {
        return Err(EncodeError::TooManyElements(s.elements.len()));
    }
    let mut element_matrix = vec![0.0; MAX_ELEMENTS * D_E];
    let mut presence_mask = [0u8; MAX_ELEMENTS];
    for (i, e) in s.elements.iter().enumerate() {
        element_matrix[i * D_E..(i + 1) * D_E].copy_from_slice(&encode_element(e));
        presence_mask[i] = 1;
    }
    Ok(ModelInput {
        element_matrix,
        presence_mask,
        utterance_vec: encode_utterance(u),
        phrases: u.phrases.len(),
    })
}

/// Compact encoding without the dense padding.
pub fn encode_compact(s: &ScreenRepresentation, u: &Utterance) -> Result<CompactInput, EncodeError> {
    if s.elements.len() > MAX_ELEMENTS {
        return Err(EncodeError::TooManyElements(s.elements.len()));
    }
    let mut rows = Vec::with_capacity(s.elements.len() * D_E);
    for e in &s.elements {
        rows.extend_from_slice(&encode_element(e));
    }
    Ok(CompactInput {
        rows,
        utterance: encode_utterance(u),
        phrases: u.phrases.len(),
    })
}
