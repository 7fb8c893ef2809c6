//! Domain types shared by every subsystem: UI elements, screens, the factored
//! action space and its loss masks, demonstrations.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on elements per screen; fixes the network's pointer width.
pub const MAX_ELEMENTS: usize = 48;
/// Size of the action-argument head.
pub const ARG_VOCAB: usize = 8;
/// Scroll directions occupy argument slots `0..SCROLL_DIRECTIONS`.
pub const SCROLL_DIRECTIONS: usize = 4;
pub const NUM_ACTION_TYPES: usize = 6;
pub const MAX_PHRASES: usize = ARG_VOCAB;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid bbox ({0}, {1}, {2}, {3})")]
    InvalidBBox(f64, f64, f64, f64),
    #[error("element {id}: state {state:?} not allowed for kind {kind:?}")]
    StateKindMismatch {
        id: u32,
        kind: ElementKind,
        state: ElementState,
    },
    #[error("element {id}: nav tag on kind {kind:?}")]
    NavTagKind { id: u32, kind: ElementKind },
    #[error("duplicate element id {0}")]
    DuplicateId(u32),
    #[error("screen has {0} elements, limit is {MAX_ELEMENTS}")]
    TooManyElements(usize),
    #[error("utterance has {0} phrases, limit is {MAX_PHRASES}")]
    TooManyPhrases(usize),
    #[error("search utterance without phrases")]
    EmptyPhrases,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ElementKind {
    Text,
    Icon,
    Image,
    InputField,
    Button,
    Checkbox,
    Radio,
}

impl ElementKind {
    pub const ALL: [ElementKind; 7] = [
        ElementKind::Text,
        ElementKind::Icon,
        ElementKind::Image,
        ElementKind::InputField,
        ElementKind::Button,
        ElementKind::Checkbox,
        ElementKind::Radio,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_toggle(self) -> bool {
        matches!(self, ElementKind::Checkbox | ElementKind::Radio)
    }

    /// Kinds whose rendered height follows the font scale.
    pub fn carries_text(self) -> bool {
        matches!(
            self,
            ElementKind::Text | ElementKind::Button | ElementKind::InputField
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ElementState {
    #[default]
    None,
    Checked,
    Unchecked,
    Focused,
}

impl ElementState {
    pub const ALL: [ElementState; 4] = [
        ElementState::None,
        ElementState::Checked,
        ElementState::Unchecked,
        ElementState::Focused,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn toggled(self) -> ElementState {
        match self {
            ElementState::Checked => ElementState::Unchecked,
            ElementState::Unchecked => ElementState::Checked,
            other => other,
        }
    }
}

/// Tags for the common navigation elements that augmentation always keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NavTag {
    Back,
    Home,
    Menu,
    Search,
    Close,
    Enter,
}

impl NavTag {
    pub const ALL: [NavTag; 6] = [
        NavTag::Back,
        NavTag::Home,
        NavTag::Menu,
        NavTag::Search,
        NavTag::Close,
        NavTag::Enter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Keyword matcher for element lists that arrive without tags.
    pub fn from_keyword(text: &str) -> Option<NavTag> {
        match text.trim().to_ascii_lowercase().as_str() {
            "back" | "<" | "←" | "navigate up" => Some(NavTag::Back),
            "home" => Some(NavTag::Home),
            "menu" | "more options" | "≡" => Some(NavTag::Menu),
            "search" => Some(NavTag::Search),
            "x" | "close" | "dismiss" | "clear" => Some(NavTag::Close),
            "enter" | "go" => Some(NavTag::Enter),
            _ => None,
        }
    }
}

/// Normalized rectangle, fractions of the screen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, ModelError> {
        let b = BBox { x0, y0, x1, y1 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(ModelError::InvalidBBox(x0, y0, x1, y1))
        }
    }

    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.x0)
            && in_unit(self.y0)
            && in_unit(self.x1)
            && in_unit(self.y1)
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn transposed(&self) -> BBox {
        BBox {
            x0: self.y0,
            y0: self.x0,
            x1: self.y1,
            y1: self.x1,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UiElement {
    pub id: u32,
    pub kind: ElementKind,
    #[serde(default)]
    pub text: String,
    pub bbox: BBox,
    #[serde(default)]
    pub state: ElementState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nav_tag: Option<NavTag>,
}

impl UiElement {
    pub fn new(id: u32, kind: ElementKind, text: impl Into<String>, bbox: BBox) -> Self {
        UiElement {
            id,
            kind,
            text: text.into(),
            bbox,
            state: ElementState::None,
            nav_tag: None,
        }
    }

    pub fn with_state(mut self, state: ElementState) -> Self {
        self.state = state;
        self
    }

    pub fn with_nav(mut self, tag: NavTag) -> Self {
        self.nav_tag = Some(tag);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.bbox.is_valid() {
            let b = self.bbox;
            return Err(ModelError::InvalidBBox(b.x0, b.y0, b.x1, b.y1));
        }
        if matches!(self.state, ElementState::Checked | ElementState::Unchecked)
            && !self.kind.is_toggle()
        {
            return Err(ModelError::StateKindMismatch {
                id: self.id,
                kind: self.kind,
                state: self.state,
            });
        }
        if self.nav_tag.is_some()
            && !matches!(
                self.kind,
                ElementKind::Icon | ElementKind::Button | ElementKind::Text
            )
        {
            return Err(ModelError::NavTagKind {
                id: self.id,
                kind: self.kind,
            });
        }
        Ok(())
    }
}

fn reading_order(a: &UiElement, b: &UiElement) -> Ordering {
    a.bbox
        .y0
        .total_cmp(&b.bbox.y0)
        .then(a.bbox.x0.total_cmp(&b.bbox.x0))
        .then(a.id.cmp(&b.id))
}

/// Stable sort by `(y0, x0, id)`.
pub fn canonical_order(mut elements: Vec<UiElement>) -> Vec<UiElement> {
    elements.sort_by(reading_order);
    elements
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenRepresentation {
    pub elements: Vec<UiElement>,
    pub frame_id: u64,
}

impl ScreenRepresentation {
    /// Validates every element and puts them in canonical order.
    pub fn new(elements: Vec<UiElement>, frame_id: u64) -> Result<Self, ModelError> {
        if elements.len() > MAX_ELEMENTS {
            return Err(ModelError::TooManyElements(elements.len()));
        }
        let mut seen = std::collections::HashSet::with_capacity(elements.len());
        for e in &elements {
            e.validate()?;
            if !seen.insert(e.id) {
                return Err(ModelError::DuplicateId(e.id));
            }
        }
        Ok(ScreenRepresentation {
            elements: canonical_order(elements),
            frame_id,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionClass {
    Element,
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionType {
    Click,
    FocusAndType,
    Scroll,
    Wait,
    Back,
    PressEnter,
}

impl ActionType {
    pub const ALL: [ActionType; NUM_ACTION_TYPES] = [
        ActionType::Click,
        ActionType::FocusAndType,
        ActionType::Scroll,
        ActionType::Wait,
        ActionType::Back,
        ActionType::PressEnter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionType> {
        ActionType::ALL.get(i).copied()
    }

    pub fn class(self) -> ActionClass {
        match self {
            ActionType::Click | ActionType::FocusAndType | ActionType::Scroll => {
                ActionClass::Element
            }
            ActionType::Wait | ActionType::Back | ActionType::PressEnter => ActionClass::Global,
        }
    }

    pub fn is_element_action(self) -> bool {
        self.class() == ActionClass::Element
    }

    pub fn needs_arg(self) -> bool {
        matches!(self, ActionType::Scroll | ActionType::FocusAndType)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionType::Click => "click",
            ActionType::FocusAndType => "focus_and_type",
            ActionType::Scroll => "scroll",
            ActionType::Wait => "wait",
            ActionType::Back => "back",
            ActionType::PressEnter => "press_enter",
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss masks for the element-index and action-arg heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionMasks {
    pub element: u8,
    pub arg: u8,
}

pub fn action_masks(action_type: ActionType) -> ActionMasks {
    ActionMasks {
        element: action_type.is_element_action() as u8,
        arg: action_type.needs_arg() as u8,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScrollDirection {
    Up,
    Down,
    Left,
    Right,
}

impl ScrollDirection {
    pub const ALL: [ScrollDirection; SCROLL_DIRECTIONS] = [
        ScrollDirection::Up,
        ScrollDirection::Down,
        ScrollDirection::Left,
        ScrollDirection::Right,
    ];

    pub fn from_arg(arg: usize) -> Option<Self> {
        Self::ALL.get(arg).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentAction {
    pub element_index: usize,
    pub action_type: ActionType,
    pub action_arg: usize,
}

impl AgentAction {
    pub fn new(element_index: usize, action_type: ActionType, action_arg: usize) -> Self {
        AgentAction {
            element_index,
            action_type,
            action_arg,
        }
    }

    pub fn click(element_index: usize) -> Self {
        Self::new(element_index, ActionType::Click, 0)
    }

    pub fn global(action_type: ActionType) -> Self {
        Self::new(0, action_type, 0)
    }

    /// Zeroes the fields the masks say nobody reads.
    pub fn canonical(self) -> Self {
        let m = action_masks(self.action_type);
        AgentAction {
            element_index: self.element_index * m.element as usize,
            action_type: self.action_type,
            action_arg: self.action_arg * m.arg as usize,
        }
    }

    /// Equality on the fields that survive masking.
    pub fn same_behavior(&self, other: &AgentAction) -> bool {
        self.canonical() == other.canonical()
    }
}

impl fmt::Display for AgentAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = action_masks(self.action_type);
        match (m.element, m.arg) {
            (1, 1) => write!(
                f,
                "{}(#{}, arg {})",
                self.action_type, self.element_index, self.action_arg
            ),
            (1, _) => write!(f, "{}(#{})", self.action_type, self.element_index),
            _ => write!(f, "{}", self.action_type),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InvalidAction {
    #[error("index out of range")]
    IndexOutOfRange,
    #[error("phrase index out of range")]
    PhraseOutOfRange,
    #[error("scroll direction out of range")]
    DirectionOutOfRange,
    #[error("argument out of range")]
    ArgOutOfRange,
}

pub fn validate_action(
    action: &AgentAction,
    screen: &ScreenRepresentation,
    utterance: &Utterance,
) -> Result<(), InvalidAction> {
    if action.action_arg >= ARG_VOCAB {
        return Err(InvalidAction::ArgOutOfRange);
    }
    if action.action_type.is_element_action() && action.element_index >= screen.len() {
        return Err(InvalidAction::IndexOutOfRange);
    }
    match action.action_type {
        ActionType::FocusAndType if action.action_arg >= utterance.phrases.len() => {
            Err(InvalidAction::PhraseOutOfRange)
        }
        ActionType::Scroll if action.action_arg >= SCROLL_DIRECTIONS => {
            Err(InvalidAction::DirectionOutOfRange)
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UtteranceTemplate {
    SearchFor,
    Install,
}

impl UtteranceTemplate {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub template: UtteranceTemplate,
    pub phrases: Vec<String>,
}

impl Utterance {
    pub fn new(template: UtteranceTemplate, phrases: Vec<String>) -> Result<Self, ModelError> {
        if phrases.len() > MAX_PHRASES {
            return Err(ModelError::TooManyPhrases(phrases.len()));
        }
        if template == UtteranceTemplate::SearchFor && phrases.is_empty() {
            return Err(ModelError::EmptyPhrases);
        }
        Ok(Utterance { template, phrases })
    }

    pub fn search_for(phrase: impl Into<String>) -> Self {
        Utterance {
            template: UtteranceTemplate::SearchFor,
            phrases: vec![phrase.into()],
        }
    }

    pub fn install(app: impl Into<String>) -> Self {
        Utterance {
            template: UtteranceTemplate::Install,
            phrases: vec![app.into()],
        }
    }

    pub fn phrase(&self, i: usize) -> Option<&str> {
        self.phrases.get(i).map(String::as_str)
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.phrases.first().map(String::as_str).unwrap_or("");
        match self.template {
            UtteranceTemplate::SearchFor => write!(f, "search for {p}"),
            UtteranceTemplate::Install => write!(f, "install {p}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MacroStatus {
    Success,
    Failure,
    Cancelation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacroResult {
    pub status: MacroStatus,
    pub frames_consumed: u32,
}

impl MacroResult {
    pub fn success(frames: u32) -> Self {
        MacroResult {
            status: MacroStatus::Success,
            frames_consumed: frames,
        }
    }

    pub fn failure(frames: u32) -> Self {
        MacroResult {
            status: MacroStatus::Failure,
            frames_consumed: frames,
        }
    }

    pub fn cancelation() -> Self {
        MacroResult {
            status: MacroStatus::Cancelation,
            frames_consumed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Orientation {
    Portrait,
    Landscape,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewing {
    pub scale: f64,
    pub font_scale: f64,
    pub orientation: Orientation,
}

impl Viewing {
    pub const SCALES: [f64; 3] = [0.75, 1.0, 1.25];
    pub const FONT_SCALES: [f64; 3] = [0.85, 1.0, 1.3];
}

impl Default for Viewing {
    fn default() -> Self {
        Viewing {
            scale: 1.0,
            font_scale: 1.0,
            orientation: Orientation::Portrait,
        }
    }
}

/// Everything needed to reproduce an episode bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub app_id: String,
    pub viewing: Viewing,
    pub init_clicks: u32,
    pub utterance: Utterance,
    pub perception_lag: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub screen: ScreenRepresentation,
    pub utterance: Utterance,
    pub action: AgentAction,
    pub result: MacroResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoEpisode {
    pub config: EpisodeConfig,
    pub steps: Vec<DemoStep>,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenshotDemo {
    pub step: DemoStep,
    /// Identifier of the evaluation failure the screenshot came from.
    pub origin: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(id: u32, x0: f64, y0: f64) -> UiElement {
        UiElement::new(
            id,
            ElementKind::Text,
            format!("e{id}"),
            BBox::new(x0, y0, x0 + 0.1, y0 + 0.05).unwrap(),
        )
    }

    fn screen(n: usize) -> ScreenRepresentation {
        let els = (0..n).map(|i| el(i as u32, 0.1, 0.1 * i as f64)).collect();
        ScreenRepresentation::new(els, 0).unwrap()
    }

    #[test]
    fn masks_per_type() {
        let m = |t| {
            let m = action_masks(t);
            (m.element, m.arg)
        };
        assert_eq!(m(ActionType::Click), (1, 0));
        assert_eq!(m(ActionType::Back), (0, 0));
        assert_eq!(m(ActionType::FocusAndType), (1, 1));
        assert_eq!(m(ActionType::Scroll), (1, 1));
        assert_eq!(m(ActionType::Wait), (0, 0));
        assert_eq!(m(ActionType::PressEnter), (0, 0));
        for t in ActionType::ALL {
            assert_eq!(action_masks(t).element == 1, t.is_element_action());
        }
    }

    #[test]
    fn validate_examples() {
        let s = screen(5);
        let u = Utterance::new(
            UtteranceTemplate::SearchFor,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert!(validate_action(&AgentAction::click(2), &s, &u).is_ok());
        let err = validate_action(&AgentAction::click(7), &s, &u).unwrap_err();
        assert_eq!(err.to_string(), "index out of range");
        let ft = AgentAction::new(0, ActionType::FocusAndType, 3);
        assert_eq!(
            validate_action(&ft, &s, &u).unwrap_err().to_string(),
            "phrase index out of range"
        );
        // global actions ignore the element index entirely
        let back = AgentAction::new(40, ActionType::Back, 0);
        assert!(validate_action(&back, &s, &u).is_ok());
        let scroll = AgentAction::new(1, ActionType::Scroll, 5);
        assert_eq!(
            validate_action(&scroll, &s, &u),
            Err(InvalidAction::DirectionOutOfRange)
        );
    }

    #[test]
    fn canonical_order_same_row_by_x() {
        let a = el(1, 0.5, 0.2);
        let b = el(2, 0.1, 0.2);
        let out = canonical_order(vec![a.clone(), b.clone()]);
        assert_eq!(out, vec![b, a]);
    }

    fn permutations(items: &[UiElement]) -> Vec<Vec<UiElement>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, head.clone());
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn canonical_order_permutation_oracle() {
        // two share y0, two share (y0, x0) and differ only by id
        let set = vec![el(3, 0.4, 0.3), el(1, 0.2, 0.3), el(7, 0.2, 0.1), el(2, 0.2, 0.1)];
        let perms = permutations(&set);
        assert_eq!(perms.len(), 24);
        let expected = canonical_order(perms[0].clone());
        for p in perms {
            assert_eq!(canonical_order(p), expected);
        }
        let ids: Vec<u32> = expected.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![2, 7, 1, 3]);
    }

    #[test]
    fn element_invariants() {
        let b = BBox::new(0.1, 0.1, 0.2, 0.2).unwrap();
        assert!(BBox::new(0.2, 0.1, 0.2, 0.3).is_err());
        assert!(BBox::new(0.0, 0.0, 1.2, 0.3).is_err());
        let bad = UiElement::new(1, ElementKind::Text, "x", b).with_state(ElementState::Checked);
        assert!(bad.validate().is_err());
        let ok = UiElement::new(1, ElementKind::Checkbox, "x", b).with_state(ElementState::Checked);
        assert!(ok.validate().is_ok());
        let nav = UiElement::new(1, ElementKind::InputField, "x", b).with_nav(NavTag::Search);
        assert!(nav.validate().is_err());
        let dup = vec![
            UiElement::new(1, ElementKind::Text, "a", b),
            UiElement::new(1, ElementKind::Text, "b", b),
        ];
        assert_eq!(
            ScreenRepresentation::new(dup, 0),
            Err(ModelError::DuplicateId(1))
        );
    }

    #[test]
    fn keyword_nav_tags() {
        assert_eq!(NavTag::from_keyword("Back"), Some(NavTag::Back));
        assert_eq!(NavTag::from_keyword(" X "), Some(NavTag::Close));
        assert_eq!(NavTag::from_keyword("menu"), Some(NavTag::Menu));
        assert_eq!(NavTag::from_keyword("settings"), None);
    }

    #[test]
    fn canonical_action_zeroes_masked_fields() {
        let a = AgentAction::new(5, ActionType::Back, 3);
        assert_eq!(a.canonical(), AgentAction::new(0, ActionType::Back, 0));
        let c = AgentAction::new(5, ActionType::Click, 3);
        assert_eq!(c.canonical(), AgentAction::new(5, ActionType::Click, 0));
        assert!(AgentAction::new(1, ActionType::Wait, 2)
            .same_behavior(&AgentAction::new(9, ActionType::Wait, 0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_element(id: u32) -> impl Strategy<Value = UiElement> {
            (0.0..0.9f64, 0.0..0.9f64, 0.01..0.1f64, 0.01..0.1f64).prop_map(
                move |(x, y, w, h)| {
                    UiElement::new(id, ElementKind::Text, "", BBox::new(x, y, x + w, y + h).unwrap())
                },
            )
        }

        proptest! {
            #[test]
            fn canonical_order_is_idempotent_permutation(
                els in (1usize..12).prop_flat_map(|n| {
                    (0..n as u32).map(arb_element).collect::<Vec<_>>()
                })
            ) {
                let once = canonical_order(els.clone());
                let twice = canonical_order(once.clone());
                prop_assert_eq!(&once, &twice);
                let mut a: Vec<u32> = els.iter().map(|e| e.id).collect();
                let mut b: Vec<u32> = once.iter().map(|e| e.id).collect();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
        }
    }
}
