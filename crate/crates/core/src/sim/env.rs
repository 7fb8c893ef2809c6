use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::app::{AppError, AppRegistry, CompiledElement, Condition, Effect, SimApp, TaskKind};
use super::grid::{background_color, fnv1a, paint_color, CellRect, PixelGrid, CURSOR_COLOR, GRID_HEIGHT, GRID_WIDTH};
use super::words;
use crate::model::{
    BBox, ElementKind, ElementState, EpisodeConfig, Orientation, ScreenRepresentation,
    ScrollDirection, UiElement, Utterance, Viewing,
};

/// Snapshots kept for lagged perception and stale-element checks.
const HISTORY: usize = 16;
const DISTRACTOR_ID_BASE: u32 = 100;
const LOADING_BG: u32 = 0xF0_F0F0;
/// Largest per-side enlargement of a box under big scales or fonts.
const MAX_GROWTH: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(#[from] AppError),
    #[error("no active episode")]
    NoEpisode,
    #[error("cell ({x}, {y}) outside {width}x{height} grid")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("no focused input field")]
    NoFocus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MicroKey {
    Back,
    Enter,
}

/// What is on screen at one tick, in paint order.
#[derive(Clone, Debug)]
struct Display {
    elements: Vec<Placed>,
    background: u32,
    animated: Option<BBox>,
    cursor: Option<CellRect>,
}

#[derive(Clone, Debug)]
struct Placed {
    element: UiElement,
    /// Index into the screen definition; `None` for distractors and loading.
    def: Option<usize>,
}

#[derive(Clone, Debug)]
struct Snapshot {
    tick: u64,
    elements: Arc<Vec<UiElement>>,
    frame: Arc<PixelGrid>,
}

#[derive(Clone, Debug)]
pub(crate) struct Episode {
    pub(crate) cfg: EpisodeConfig,
    pub(crate) app: Arc<SimApp>,
    rng: ChaCha8Rng,
    pub(crate) variant: Option<usize>,
    pub(crate) screen: usize,
    entered_at: u64,
    pub(crate) loading_until: Option<u64>,
    pending_popup: Option<(usize, u64)>,
    pub(crate) field: String,
    focus: Option<(usize, u32)>,
    other_fields: BTreeMap<(usize, u32), String>,
    toggles: BTreeMap<(usize, u32), ElementState>,
    pub(crate) query: Option<String>,
    pub(crate) opened: Option<String>,
    distractors: BTreeMap<usize, Arc<Vec<UiElement>>>,
    tick: u64,
    history: VecDeque<Snapshot>,
    display: Display,
    rare_popups_shown: u32,
}

/// One simulated device running one app. Single-threaded; independent
/// instances share nothing mutable.
#[derive(Clone, Debug)]
pub struct SimEnv {
    registry: Arc<AppRegistry>,
    ep: Option<Episode>,
}

/// Derives an independent seed from two words.
pub fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Applies viewing parameters to a portrait, scale-1.0 box.
pub fn layout_bbox(base: &BBox, kind: ElementKind, viewing: &Viewing) -> BBox {
    let cx = (base.x0 + base.x1) / 2.0;
    let cy = (base.y0 + base.y1) / 2.0;
    let font = if kind.carries_text() { viewing.font_scale } else { 1.0 };
    // Growth is capped so neighbors a few hundredths apart never overlap.
    let grow = |half: f64, factor: f64| (half * factor).min(half + MAX_GROWTH);
    let hw = grow(base.width() / 2.0, viewing.scale);
    let hh = grow(base.height() / 2.0, viewing.scale * font);
    let span = |c: f64, h: f64| {
        let mut lo = (c - h).max(0.0);
        let mut hi = (c + h).min(1.0);
        if hi - lo < 0.005 {
            lo = (c - 0.0025).clamp(0.0, 0.995);
            hi = lo + 0.005;
        }
        (lo, hi)
    };
    let (x0, x1) = span(cx, hw);
    let (y0, y1) = span(cy, hh);
    let b = BBox { x0, y0, x1, y1 };
    match viewing.orientation {
        Orientation::Portrait => b,
        Orientation::Landscape => b.transposed(),
    }
}

impl SimEnv {
    pub fn new(registry: Arc<AppRegistry>) -> Self {
        SimEnv { registry, ep: None }
    }

    pub fn registry(&self) -> &Arc<AppRegistry> {
        &self.registry
    }

    pub fn reset(&mut self, cfg: &EpisodeConfig) -> Result<(ScreenRepresentation, Utterance), SimError> {
        let app = self.registry.get(&cfg.app_id)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, 0x0E41_50DE));
        let variant = if app.def.variants.is_empty() {
            None
        } else {
            Some(rng.random_range(0..app.def.variants.len()))
        };
        let mut field = String::new();
        if app.def.prefill > 0.0 && rng.random::<f64>() < app.def.prefill {
            let target = cfg.utterance.phrase(0).unwrap_or("");
            let others: Vec<&String> = app.def.queries.iter().filter(|q| *q != target).collect();
            field = others
                .choose(&mut rng)
                .map(|s| s.to_string())
                .unwrap_or_else(|| "something".into());
        }
        let mut ep = Episode {
            cfg: cfg.clone(),
            app: app.clone(),
            rng,
            variant,
            screen: app.entry,
            entered_at: 0,
            loading_until: None,
            pending_popup: None,
            field,
            focus: None,
            other_fields: BTreeMap::new(),
            toggles: BTreeMap::new(),
            query: None,
            opened: None,
            distractors: BTreeMap::new(),
            tick: 0,
            history: VecDeque::with_capacity(HISTORY),
            display: Display {
                elements: Vec::new(),
                background: 0,
                animated: None,
                cursor: None,
            },
            rare_popups_shown: 0,
        };
        ep.enter(app.entry, false);
        ep.refresh();

        let init_clicks = cfg.init_clicks;
        for _ in 0..init_clicks {
            ep.settle_loading();
            let candidates: Vec<usize> = ep
                .display
                .elements
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    p.def.is_some_and(|d| {
                        let e = &ep.app.screens[ep.screen].elements[d];
                        e.tap.is_some_and(|t| t != ep.app.result_screen) && e.effect.is_none()
                    })
                })
                .map(|(i, _)| i)
                .collect();
            if let Some(&pick) = candidates.choose(&mut ep.rng) {
                let d = ep.display.elements[pick].def.expect("filtered to defined elements");
                ep.activate(d);
            }
            ep.advance();
        }
        ep.settle_loading();
        for _ in 0..3 {
            ep.advance();
        }
        self.ep = Some(ep);
        let utterance = cfg.utterance.clone();
        Ok((self.perceive()?, utterance))
    }

    fn ep(&self) -> Result<&Episode, SimError> {
        self.ep.as_ref().ok_or(SimError::NoEpisode)
    }

    fn ep_mut(&mut self) -> Result<&mut Episode, SimError> {
        self.ep.as_mut().ok_or(SimError::NoEpisode)
    }

    pub(crate) fn episode(&self) -> Option<&Episode> {
        self.ep.as_ref()
    }

    pub fn config(&self) -> Result<&EpisodeConfig, SimError> {
        Ok(&self.ep()?.cfg)
    }

    pub fn app(&self) -> Result<&Arc<SimApp>, SimError> {
        Ok(&self.ep()?.app)
    }

    pub fn tick(&self) -> Result<u64, SimError> {
        Ok(self.ep()?.tick)
    }

    pub fn grid_size(&self) -> Result<(u32, u32), SimError> {
        Ok(grid_dims(self.ep()?.cfg.viewing.orientation))
    }

    /// Advances one frame with no input.
    pub fn step_frame(&mut self) -> Result<(), SimError> {
        self.ep_mut()?.advance();
        Ok(())
    }

    fn check_cell(&self, x: u32, y: u32) -> Result<(), SimError> {
        let (width, height) = self.grid_size()?;
        if x >= width || y >= height {
            return Err(SimError::OutOfBounds { x, y, width, height });
        }
        Ok(())
    }

    pub fn micro_tap(&mut self, x: u32, y: u32) -> Result<(), SimError> {
        self.check_cell(x, y)?;
        let ep = self.ep_mut()?;
        if let Some(d) = ep.hit(x, y) {
            ep.activate(d);
        }
        ep.advance();
        Ok(())
    }

    pub fn micro_scroll(&mut self, x: u32, y: u32, dir: ScrollDirection) -> Result<(), SimError> {
        self.check_cell(x, y)?;
        let ep = self.ep_mut()?;
        if let Some(d) = ep.hit(x, y) {
            if let Some(t) = ep.app.screens[ep.screen].elements[d].scroll_target(dir) {
                ep.focus = None;
                ep.navigate(t);
            }
        }
        ep.advance();
        Ok(())
    }

    pub fn micro_type(&mut self, text: &str) -> Result<(), SimError> {
        let ep = self.ep_mut()?;
        let (s, id) = ep.focus.ok_or(SimError::NoFocus)?;
        if s == ep.app.search_screen && id == ep.app.search_element {
            ep.field.push_str(text);
        } else {
            ep.other_fields.entry((s, id)).or_default().push_str(text);
        }
        ep.advance();
        Ok(())
    }

    pub fn micro_key(&mut self, key: MicroKey) -> Result<(), SimError> {
        let ep = self.ep_mut()?;
        if ep.loading_until.is_none() {
            match key {
                MicroKey::Back => {
                    ep.focus = None;
                    let back = ep.app.screens[ep.screen].back;
                    if back != ep.screen {
                        ep.navigate(back);
                    }
                }
                MicroKey::Enter => {
                    if ep.focus == Some((ep.app.search_screen, ep.app.search_element)) {
                        ep.query = Some(ep.field.clone());
                        ep.focus = None;
                        let target = ep.app.result_screen;
                        ep.navigate(target);
                    }
                }
            }
        }
        ep.advance();
        Ok(())
    }

    /// Text currently held by the focused field, as a field readback would
    /// report it.
    pub fn focused_text(&self) -> Result<Option<String>, SimError> {
        let ep = self.ep()?;
        Ok(ep.focus.map(|(s, id)| ep.field_content(s, id)))
    }

    pub fn render_frame(&self) -> Result<PixelGrid, SimError> {
        let ep = self.ep()?;
        Ok((*ep.history.back().expect("history is never empty").frame).clone())
    }

    /// Frame recorded at `tick`, if still in the history window.
    pub fn frame_at(&self, tick: u64) -> Result<Option<PixelGrid>, SimError> {
        let ep = self.ep()?;
        Ok(ep
            .history
            .iter()
            .find(|s| s.tick == tick)
            .map(|s| (*s.frame).clone()))
    }

    /// Element list as of `tick - perception_lag`.
    pub fn perceive(&self) -> Result<ScreenRepresentation, SimError> {
        let ep = self.ep()?;
        let want = ep.tick.saturating_sub(ep.cfg.perception_lag as u64);
        let snap = ep
            .history
            .iter()
            .find(|s| s.tick >= want)
            .expect("history is never empty");
        Ok(ScreenRepresentation::new((*snap.elements).clone(), snap.tick)
            .expect("simulator emits valid screens"))
    }

    /// Lag-free element list of the current frame.
    pub fn ground_truth(&self) -> Result<ScreenRepresentation, SimError> {
        let ep = self.ep()?;
        let snap = ep.history.back().expect("history is never empty");
        Ok(ScreenRepresentation::new((*snap.elements).clone(), snap.tick)
            .expect("simulator emits valid screens"))
    }

    pub fn is_success(&self) -> bool {
        let Some(ep) = self.ep.as_ref() else {
            return false;
        };
        let phrase = ep.cfg.utterance.phrase(0);
        match ep.app.task() {
            TaskKind::Search => {
                ep.loading_until.is_none()
                    && ep.screen == ep.app.result_screen
                    && ep.query.as_deref() == phrase
            }
            TaskKind::Install => ep.opened.is_some() && ep.opened.as_deref() == phrase,
        }
    }

    pub fn current_screen_name(&self) -> Result<&str, SimError> {
        let ep = self.ep()?;
        Ok(&ep.app.screens[ep.screen].name)
    }

    pub fn is_loading(&self) -> bool {
        self.ep.as_ref().is_some_and(|e| e.loading_until.is_some())
    }

    pub fn query(&self) -> Option<&str> {
        self.ep.as_ref().and_then(|e| e.query.as_deref())
    }

    pub fn rare_popups_shown(&self) -> u32 {
        self.ep.as_ref().map_or(0, |e| e.rare_popups_shown)
    }

    /// True while a popup flagged rare covers the screen.
    pub fn on_rare_popup(&self) -> bool {
        self.ep
            .as_ref()
            .is_some_and(|e| e.app.popups.iter().any(|p| p.rare && p.screen == e.screen))
    }

    /// Digest of everything that determines future behavior.
    pub fn state_digest(&self) -> u64 {
        let Some(ep) = self.ep.as_ref() else {
            return 0;
        };
        let repr = format!(
            "{}|{:?}|{}|{}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{}",
            ep.app.app_id(),
            ep.variant,
            ep.screen,
            ep.entered_at,
            ep.loading_until,
            ep.pending_popup,
            ep.field,
            ep.focus,
            ep.other_fields,
            ep.toggles,
            ep.query,
            ep.opened,
            ep.tick,
        );
        fnv1a(repr.as_bytes(), ep.rng.get_word_pos() as u64)
    }
}

pub fn grid_dims(orientation: Orientation) -> (u32, u32) {
    match orientation {
        Orientation::Portrait => (GRID_WIDTH, GRID_HEIGHT),
        Orientation::Landscape => (GRID_HEIGHT, GRID_WIDTH),
    }
}

impl Episode {
    fn condition_holds(&self, c: &Condition) -> bool {
        match c {
            Condition::Always => true,
            Condition::Filled => !self.field.is_empty(),
            Condition::Empty => self.field.is_empty(),
            Condition::Variant(v) => self.variant == Some(*v),
        }
    }

    pub(crate) fn visible(&self, e: &CompiledElement) -> bool {
        self.condition_holds(&e.when)
    }

    fn field_content(&self, s: usize, id: u32) -> String {
        if s == self.app.search_screen && id == self.app.search_element {
            self.field.clone()
        } else {
            self.other_fields.get(&(s, id)).cloned().unwrap_or_default()
        }
    }

    fn enter(&mut self, target: usize, from_popup: bool) {
        self.screen = target;
        self.entered_at = self.tick;
        self.focus = None;
        self.pending_popup = None;
        if from_popup {
            return;
        }
        let app = self.app.clone();
        for p in app.popups.iter().filter(|p| p.host == target) {
            let roll: f64 = self.rng.random();
            if roll < p.probability {
                if p.rare {
                    self.rare_popups_shown += 1;
                }
                if p.delay == 0 {
                    self.screen = p.screen;
                } else {
                    self.pending_popup = Some((p.screen, self.tick + p.delay as u64));
                }
                break;
            }
        }
    }

    fn navigate(&mut self, target: usize) {
        let from_popup = self.app.screens[self.screen].popup_host == Some(target);
        let loading = self.app.screens[target].loading;
        self.focus = None;
        if loading > 0 && !from_popup {
            self.screen = target;
            self.entered_at = self.tick;
            self.pending_popup = None;
            self.loading_until = Some(self.tick + loading as u64);
        } else {
            self.loading_until = None;
            self.enter(target, from_popup);
        }
    }

    fn settle_loading(&mut self) {
        for _ in 0..64 {
            if self.loading_until.is_none() {
                break;
            }
            self.advance();
        }
    }

    /// Topmost defined element whose painted cells contain `(x, y)`.
    fn hit(&self, x: u32, y: u32) -> Option<usize> {
        if self.loading_until.is_some() {
            return None;
        }
        let (w, h) = grid_dims(self.cfg.viewing.orientation);
        self.display
            .elements
            .iter()
            .rev()
            .find(|p| super::grid::cell_rect(&p.element.bbox, w, h).contains(x, y))
            .and_then(|p| p.def)
    }

    /// Fires the tap behavior of defined element `d` on the current screen.
    fn activate(&mut self, d: usize) {
        let s = self.screen;
        let e = self.app.screens[s].elements[d].clone();
        if e.kind.is_toggle() {
            let cur = self.toggles.get(&(s, e.id)).copied().unwrap_or(e.initial_state);
            self.toggles.insert((s, e.id), cur.toggled());
        }
        match e.effect {
            Some(Effect::ClearField) => {
                self.field.clear();
                self.focus = None;
            }
            Some(Effect::OpenApp) => {
                self.opened = self.query.clone();
            }
            None => {}
        }
        if e.kind == ElementKind::InputField && e.tap.is_none() {
            self.focus = Some((s, e.id));
        } else if e.effect != Some(Effect::ClearField) {
            self.focus = None;
        }
        if let Some(t) = e.tap {
            self.navigate(t);
        }
    }

    fn advance(&mut self) {
        self.tick += 1;
        if let Some(until) = self.loading_until {
            if self.tick >= until {
                self.loading_until = None;
                let s = self.screen;
                self.enter(s, false);
            }
        }
        if self.loading_until.is_none() {
            if let Some((popup, at)) = self.pending_popup {
                if self.tick >= at {
                    self.pending_popup = None;
                    self.screen = popup;
                    self.entered_at = self.tick;
                    self.focus = None;
                }
            }
        }
        if self.loading_until.is_none() {
            if let Some((after, target)) = self.app.screens[self.screen].auto {
                if self.tick - self.entered_at >= after as u64 {
                    self.navigate(target);
                }
            }
        }
        self.refresh();
    }

    fn distractors_for(&mut self, s: usize) -> Arc<Vec<UiElement>> {
        if let Some(d) = self.distractors.get(&s) {
            return d.clone();
        }
        let out = Arc::new(match &self.app.screens[s].distractors {
            Some(spec) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.cfg.seed, 0xD157_0000 + s as u64));
                words::generate_distractors(spec, &mut rng, DISTRACTOR_ID_BASE, &self.app.reserved_buckets)
            }
            None => Vec::new(),
        });
        self.distractors.insert(s, out.clone());
        out
    }

    fn substitute(&self, text: &str) -> String {
        if text.contains("{query}") {
            text.replace("{query}", self.query.as_deref().unwrap_or(""))
        } else {
            text.to_string()
        }
    }

    fn compute_display(&mut self) -> Display {
        let viewing = self.cfg.viewing;
        let (w, h) = grid_dims(viewing.orientation);
        if self.loading_until.is_some() {
            let bbox = layout_bbox(
                &BBox { x0: 0.3, y0: 0.45, x1: 0.7, y1: 0.5 },
                ElementKind::Text,
                &viewing,
            );
            let spinner = layout_bbox(
                &BBox { x0: 0.4, y0: 0.52, x1: 0.6, y1: 0.62 },
                ElementKind::Image,
                &viewing,
            );
            return Display {
                elements: vec![Placed {
                    element: UiElement::new(0, ElementKind::Text, "Loading", bbox),
                    def: None,
                }],
                background: LOADING_BG,
                animated: Some(spinner),
                cursor: None,
            };
        }
        let s = self.screen;
        let scr = self.app.screens[s].clone();
        let mut elements = Vec::new();
        for d in self.distractors_for(s).iter() {
            let mut e = d.clone();
            e.bbox = layout_bbox(&d.bbox, d.kind, &viewing);
            elements.push(Placed { element: e, def: None });
        }
        let mut cursor = None;
        for (di, e) in scr.elements.iter().enumerate() {
            if !self.visible(e) {
                continue;
            }
            let bbox = layout_bbox(&e.bbox, e.kind, &viewing);
            let mut state = self.toggles.get(&(s, e.id)).copied().unwrap_or(e.initial_state);
            let mut text = self.substitute(&e.text);
            if e.kind == ElementKind::InputField {
                let content = self.field_content(s, e.id);
                if !content.is_empty() {
                    text = content.clone();
                }
                if self.focus == Some((s, e.id)) {
                    state = ElementState::Focused;
                    let r = super::grid::cell_rect(&bbox, w, h);
                    if r.width() >= 3 && r.height() >= 4 {
                        let col = r.x0 + 1 + (content.chars().count() as u32).min(r.width() - 3);
                        cursor = Some(CellRect { x0: col, y0: r.y0 + 1, x1: col + 1, y1: r.y1 - 1 });
                    }
                }
            }
            let el = UiElement {
                id: e.id,
                kind: e.kind,
                text,
                bbox,
                state,
                nav_tag: e.nav,
            };
            elements.push(Placed { element: el, def: Some(di) });
        }
        Display {
            elements,
            background: background_color(self.app.app_id(), &scr.name),
            animated: scr.animated.map(|a| layout_bbox(&a, ElementKind::Image, &viewing)),
            cursor,
        }
    }

    fn render(&self) -> PixelGrid {
        let (w, h) = grid_dims(self.cfg.viewing.orientation);
        let d = &self.display;
        let mut g = PixelGrid::new(w, h, d.background, self.tick);
        for p in &d.elements {
            let e = &p.element;
            g.fill_rect(g.rect_of(&e.bbox), paint_color(e.id, &e.text, e.state));
        }
        if let Some(a) = &d.animated {
            let color = if self.tick % 2 == 0 { 0xE0_3030 } else { 0x30_30E0 };
            g.fill_rect(g.rect_of(a), color);
        }
        if let Some(c) = d.cursor {
            if self.tick % 2 == 0 {
                g.fill_rect(c, CURSOR_COLOR);
            }
        }
        g
    }

    fn refresh(&mut self) {
        self.display = self.compute_display();
        let frame = Arc::new(self.render());
        let elements = Arc::new(self.display.elements.iter().map(|p| p.element.clone()).collect());
        if self.history.len() == HISTORY {
            self.history.pop_front();
        }
        self.history.push_back(Snapshot {
            tick: self.tick,
            elements,
            frame,
        });
    }
}
