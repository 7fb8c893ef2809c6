//! Filler content: pseudo-words and distractor elements.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::app::DistractorDef;
use crate::encoding::{text_bucket, tokens};
use crate::model::{BBox, ElementKind, UiElement};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ten", "ran", "so", "vel", "qua", "dor", "pi", "nex", "tu", "bar", "lin",
    "zo", "fe", "gra", "mun", "sel", "tor", "vi", "wen", "yo", "ha", "ri", "cet", "pol", "dru",
    "mek", "sa", "bel", "ond", "ur", "fin", "gal", "hus",
];

const ICON_NAMES: &[&str] = &["share", "more", "star", "info", "like", "bell", "pin", "tag"];

pub fn pseudo_word<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
        .collect()
}

/// A pseudo-word none of whose hash buckets is in `reserved` (indexed by
/// [`text_bucket`]), when one turns up within a few draws.
fn fresh_word<R: Rng + ?Sized>(rng: &mut R, reserved: &[bool]) -> String {
    let mut w = pseudo_word(rng);
    for _ in 0..64 {
        if !tokens(&w).any(|t| reserved[text_bucket(&t)]) {
            break;
        }
        w = pseudo_word(rng);
    }
    w
}

fn capitalized(mut s: String) -> String {
    if let Some(c) = s.get_mut(0..1) {
        c.make_ascii_uppercase();
    }
    s
}

/// Row-slotted filler elements with ids from `base_id`, in portrait layout.
/// Filler words avoid the `reserved` text buckets so that, once hashed, they
/// never read as one of the app's own labels.
pub fn generate_distractors<R: Rng + ?Sized>(
    spec: &DistractorDef,
    rng: &mut R,
    base_id: u32,
    reserved: &[bool],
) -> Vec<UiElement> {
    let [rx0, ry0, rx1, ry1] = spec.region;
    let rows = ((ry1 - ry0) / spec.row_height).floor() as usize;
    let count = rng.random_range(spec.count[0]..=spec.count[1]) as usize;
    let mut slots: Vec<usize> = (0..rows).collect();
    slots.shuffle(rng);
    slots.truncate(count.min(rows));
    slots.sort_unstable();
    let rw = rx1 - rx0;
    slots
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let kind = *spec.kinds.choose(rng).expect("validated non-empty");
            let text = match kind {
                ElementKind::Text => {
                    let words = rng.random_range(1..=3);
                    let body: Vec<String> = (0..words).map(|_| fresh_word(rng, reserved)).collect();
                    capitalized(body.join(" "))
                }
                ElementKind::Button => capitalized(fresh_word(rng, reserved)),
                ElementKind::Icon => {
                    let free: Vec<&str> =
                        ICON_NAMES.iter().copied().filter(|n| !tokens(n).any(|t| reserved[text_bucket(&t)])).collect();
                    match free.choose(rng) {
                        Some(n) => n.to_string(),
                        None => fresh_word(rng, reserved),
                    }
                }
                _ => String::new(),
            };
            let x0 = rx0 + rng.random_range(0.0..0.3) * rw;
            let max_w = rx1 - x0;
            let w = rng.random_range((0.25 * rw).min(max_w)..=max_w);
            let y0 = ry0 + row as f64 * spec.row_height + 0.2 * spec.row_height;
            let h = 0.6 * spec.row_height;
            let bbox = BBox {
                x0,
                y0,
                x1: (x0 + w).min(1.0),
                y1: (y0 + h).min(1.0),
            };
            UiElement::new(base_id + i as u32, kind, text, bbox)
        })
        .collect()
}
