//! App definition files.
//!
//! One TOML file per app. `schema_version` is mandatory and must equal
//! [`APP_SCHEMA_VERSION`]. Top-level keys:
//!
//! | key             | meaning                                                      |
//! |-----------------|--------------------------------------------------------------|
//! | `app_id`        | unique name                                                  |
//! | `task`          | `"search"` or `"install"`                                    |
//! | `entry`         | screen shown at reset                                        |
//! | `search_field`  | `"<screen>/<element key>"` of the functional search field    |
//! | `result_screen` | screen reached by ENTER in the search field                  |
//! | `queries`       | phrase pool for utterances                                   |
//! | `variants`      | optional per-episode variants (picked uniformly at reset)    |
//! | `prefill`       | probability that the search field starts with an old query   |
//! | `[[popups]]`    | `host`, `screen`, `probability`, optional `delay`, `rare`    |
//! | `[[screens]]`   | see below                                                    |
//!
//! A screen has `id`, optional `back` (BACK target, default: itself, or the
//! host for popups), `loading` (ticks of transient loading screen shown on
//! entry), `auto = { after, target }` (timed transition), `animated =
//! [x0,y0,x1,y1]` (region repainted every frame), `distractors = { count =
//! [lo,hi], region = [..], kinds = [..] }` and `[[screens.elements]]`.
//!
//! An element has `key`, `kind`, `text` (`{query}` is substituted), `bbox`
//! (portrait, scale 1.0), and optionally `nav`, `state`, `when` (`"filled"`,
//! `"empty"` or a variant name), `tap` (target screen), `scroll = { up, down,
//! left, right }` and `effect` (`"clear_field"` or `"open_app"`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{text_bucket, tokens, TEXT_BUCKETS};
use crate::model::{BBox, ElementKind, ElementState, NavTag, ScrollDirection};

pub const APP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}: parse error: {msg}")]
    Parse { file: String, msg: String },
    #[error("{app}: unsupported schema_version {found} (expected {APP_SCHEMA_VERSION})")]
    SchemaVersion { app: String, found: u32 },
    #[error("{app}: {msg}")]
    Invalid { app: String, msg: String },
    #[error("unknown app '{0}'")]
    UnknownApp(String),
    #[error("duplicate app '{0}'")]
    Duplicate(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Search,
    Install,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    ClearField,
    OpenApp,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrollDef {
    pub up: Option<String>,
    pub down: Option<String>,
    pub left: Option<String>,
    pub right: Option<String>,
}

impl ScrollDef {
    fn get(&self, dir: ScrollDirection) -> Option<&String> {
        match dir {
            ScrollDirection::Up => self.up.as_ref(),
            ScrollDirection::Down => self.down.as_ref(),
            ScrollDirection::Left => self.left.as_ref(),
            ScrollDirection::Right => self.right.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementDef {
    pub key: String,
    pub kind: ElementKind,
    #[serde(default)]
    pub text: String,
    pub bbox: [f64; 4],
    pub nav: Option<NavTag>,
    pub state: Option<ElementState>,
    pub when: Option<String>,
    pub tap: Option<String>,
    pub scroll: Option<ScrollDef>,
    pub effect: Option<Effect>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoDef {
    pub after: u32,
    pub target: String,
}

fn default_distractor_kinds() -> Vec<ElementKind> {
    vec![ElementKind::Text, ElementKind::Text, ElementKind::Image]
}

fn default_row_height() -> f64 {
    0.06
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorDef {
    pub count: [u32; 2],
    pub region: [f64; 4],
    #[serde(default = "default_distractor_kinds")]
    pub kinds: Vec<ElementKind>,
    #[serde(default = "default_row_height")]
    pub row_height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenDef {
    pub id: String,
    pub back: Option<String>,
    #[serde(default)]
    pub loading: u32,
    pub auto: Option<AutoDef>,
    pub animated: Option<[f64; 4]>,
    pub distractors: Option<DistractorDef>,
    #[serde(default)]
    pub elements: Vec<ElementDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopupDef {
    pub host: String,
    pub screen: String,
    pub probability: f64,
    #[serde(default)]
    pub delay: u32,
    #[serde(default)]
    pub rare: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDef {
    pub schema_version: u32,
    pub app_id: String,
    pub task: TaskKind,
    pub entry: String,
    pub search_field: String,
    pub result_screen: String,
    pub queries: Vec<String>,
    #[serde(default)]
    pub variants: Vec<String>,
    #[serde(default)]
    pub prefill: f64,
    #[serde(default)]
    pub popups: Vec<PopupDef>,
    pub screens: Vec<ScreenDef>,
}

/// Pre-resolved element with indices instead of names.
#[derive(Clone, Debug)]
pub struct CompiledElement {
    pub id: u32,
    pub key: String,
    pub kind: ElementKind,
    pub text: String,
    pub bbox: BBox,
    pub nav: Option<NavTag>,
    pub initial_state: ElementState,
    pub when: Condition,
    pub tap: Option<usize>,
    pub scroll: [Option<usize>; 4],
    pub effect: Option<Effect>,
}

impl CompiledElement {
    pub fn scroll_target(&self, dir: ScrollDirection) -> Option<usize> {
        self.scroll[dir as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Condition {
    Always,
    Filled,
    Empty,
    Variant(usize),
}

#[derive(Clone, Debug)]
pub struct CompiledScreen {
    pub name: String,
    pub back: usize,
    pub loading: u32,
    pub auto: Option<(u32, usize)>,
    pub animated: Option<BBox>,
    pub distractors: Option<DistractorDef>,
    pub elements: Vec<CompiledElement>,
    /// Popup host, when this screen is a popup.
    pub popup_host: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct CompiledPopup {
    pub host: usize,
    pub screen: usize,
    pub probability: f64,
    pub delay: u32,
    pub rare: bool,
}

/// A validated app graph.
#[derive(Clone, Debug)]
pub struct SimApp {
    pub def: AppDef,
    pub screens: Vec<CompiledScreen>,
    pub entry: usize,
    pub search_screen: usize,
    pub search_element: u32,
    pub result_screen: usize,
    pub popups: Vec<CompiledPopup>,
    /// Text buckets taken by the app's own labels and queries.
    pub reserved_buckets: Vec<bool>,
}

impl SimApp {
    pub fn app_id(&self) -> &str {
        &self.def.app_id
    }

    pub fn task(&self) -> TaskKind {
        self.def.task
    }

    pub fn screen_index(&self, name: &str) -> Option<usize> {
        self.screens.iter().position(|s| s.name == name)
    }

    pub fn from_toml(text: &str, file: &str) -> Result<SimApp, AppError> {
        // Check the version before the strict parse so old files get a clear error.
        let raw: toml::Value = toml::from_str(text).map_err(|e| AppError::Parse {
            file: file.to_string(),
            msg: e.to_string(),
        })?;
        let app = raw
            .get("app_id")
            .and_then(|v| v.as_str())
            .unwrap_or(file)
            .to_string();
        match raw.get("schema_version").and_then(|v| v.as_integer()) {
            None => {
                return Err(AppError::Invalid {
                    app,
                    msg: "missing schema_version".into(),
                })
            }
            Some(v) if v != APP_SCHEMA_VERSION as i64 => {
                return Err(AppError::SchemaVersion {
                    app,
                    found: v as u32,
                })
            }
            _ => {}
        }
        let def: AppDef = toml::from_str(text).map_err(|e| AppError::Parse {
            file: file.to_string(),
            msg: e.to_string(),
        })?;
        SimApp::compile(def)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.def).expect("app definitions serialize")
    }

    pub fn compile(def: AppDef) -> Result<SimApp, AppError> {
        let app = def.app_id.clone();
        let bad = |msg: String| AppError::Invalid {
            app: app.clone(),
            msg,
        };
        if def.schema_version != APP_SCHEMA_VERSION {
            return Err(AppError::SchemaVersion {
                app: app.clone(),
                found: def.schema_version,
            });
        }
        let names: HashMap<&str, usize> = def
            .screens
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        if names.len() != def.screens.len() {
            return Err(bad("duplicate screen id".into()));
        }
        let resolve = |name: &str| -> Result<usize, AppError> {
            names
                .get(name)
                .copied()
                .ok_or_else(|| bad(format!("unknown screen '{name}'")))
        };
        if def.queries.is_empty() {
            return Err(bad("empty query pool".into()));
        }
        if !(0.0..=1.0).contains(&def.prefill) {
            return Err(bad("prefill must be a probability".into()));
        }
        let entry = resolve(&def.entry)?;
        let result_screen = resolve(&def.result_screen)?;

        let mut popups = Vec::new();
        let mut popup_host: HashMap<usize, usize> = HashMap::new();
        for p in &def.popups {
            if !(0.0..=1.0).contains(&p.probability) {
                return Err(bad(format!("popup '{}': bad probability", p.screen)));
            }
            let host = resolve(&p.host)?;
            let screen = resolve(&p.screen)?;
            if let Some(prev) = popup_host.insert(screen, host) {
                if prev != host {
                    return Err(bad(format!("popup '{}' has two hosts", p.screen)));
                }
            }
            popups.push(CompiledPopup {
                host,
                screen,
                probability: p.probability,
                delay: p.delay,
                rare: p.rare,
            });
        }

        let mut screens = Vec::with_capacity(def.screens.len());
        for (si, s) in def.screens.iter().enumerate() {
            let back = match &s.back {
                Some(b) => resolve(b)?,
                None => popup_host.get(&si).copied().unwrap_or(si),
            };
            let auto = match &s.auto {
                Some(a) => Some((a.after.max(1), resolve(&a.target)?)),
                None => None,
            };
            let animated = match s.animated {
                Some([a, b, c, d]) => Some(
                    BBox::new(a, b, c, d)
                        .map_err(|e| bad(format!("screen '{}': animated {e}", s.id)))?,
                ),
                None => None,
            };
            if let Some(d) = &s.distractors {
                BBox::new(d.region[0], d.region[1], d.region[2], d.region[3])
                    .map_err(|e| bad(format!("screen '{}': distractor region {e}", s.id)))?;
                if d.count[0] > d.count[1] || d.kinds.is_empty() || d.row_height <= 0.0 {
                    return Err(bad(format!("screen '{}': bad distractor spec", s.id)));
                }
                let rows = ((d.region[3] - d.region[1]) / d.row_height).floor() as u32;
                if d.count[1] > rows {
                    return Err(bad(format!(
                        "screen '{}': {} distractors do not fit in {rows} rows",
                        s.id, d.count[1]
                    )));
                }
            }
            let mut elements = Vec::with_capacity(s.elements.len());
            let mut keys = HashSet::new();
            for (ei, e) in s.elements.iter().enumerate() {
                if !keys.insert(e.key.as_str()) {
                    return Err(bad(format!("screen '{}': duplicate key '{}'", s.id, e.key)));
                }
                let [x0, y0, x1, y1] = e.bbox;
                let bbox = BBox::new(x0, y0, x1, y1)
                    .map_err(|err| bad(format!("{}/{}: {err}", s.id, e.key)))?;
                let when = match e.when.as_deref() {
                    None => Condition::Always,
                    Some("filled") => Condition::Filled,
                    Some("empty") => Condition::Empty,
                    Some(v) => Condition::Variant(
                        def.variants
                            .iter()
                            .position(|x| x == v)
                            .ok_or_else(|| bad(format!("{}/{}: unknown variant '{v}'", s.id, e.key)))?,
                    ),
                };
                let initial_state = match e.state {
                    Some(st) => st,
                    None if e.kind.is_toggle() => ElementState::Unchecked,
                    None => ElementState::None,
                };
                let mut scroll = [None; 4];
                if let Some(sd) = &e.scroll {
                    for dir in ScrollDirection::ALL {
                        if let Some(t) = sd.get(dir) {
                            scroll[dir as usize] = Some(resolve(t)?);
                        }
                    }
                }
                let tap = match &e.tap {
                    Some(t) => Some(resolve(t)?),
                    None => None,
                };
                let compiled = CompiledElement {
                    id: ei as u32,
                    key: e.key.clone(),
                    kind: e.kind,
                    text: e.text.clone(),
                    bbox,
                    nav: e.nav,
                    initial_state,
                    when,
                    tap,
                    scroll,
                    effect: e.effect,
                };
                let probe = crate::model::UiElement {
                    id: compiled.id,
                    kind: compiled.kind,
                    text: compiled.text.clone(),
                    bbox,
                    state: initial_state,
                    nav_tag: compiled.nav,
                };
                probe
                    .validate()
                    .map_err(|err| bad(format!("{}/{}: {err}", s.id, e.key)))?;
                elements.push(compiled);
            }
            screens.push(CompiledScreen {
                name: s.id.clone(),
                back,
                loading: s.loading,
                auto,
                animated,
                distractors: s.distractors.clone(),
                elements,
                popup_host: popup_host.get(&si).copied(),
            });
        }

        let (field_screen, field_key) = def
            .search_field
            .split_once('/')
            .ok_or_else(|| bad("search_field must be '<screen>/<key>'".into()))?;
        let search_screen = resolve(field_screen)?;
        let search_element = screens[search_screen]
            .elements
            .iter()
            .find(|e| e.key == field_key)
            .filter(|e| e.kind == ElementKind::InputField && e.tap.is_none())
            .map(|e| e.id)
            .ok_or_else(|| bad(format!("search field '{}' is not an input field", def.search_field)))?;

        let mut reserved_buckets = vec![false; TEXT_BUCKETS];
        let labels = def.screens.iter().flat_map(|s| &s.elements).map(|e| e.text.as_str());
        for text in labels.chain(def.queries.iter().map(String::as_str)) {
            for t in tokens(text) {
                reserved_buckets[text_bucket(&t)] = true;
            }
        }
        let sim = SimApp {
            reserved_buckets,
            def,
            screens,
            entry,
            search_screen,
            search_element,
            result_screen,
            popups,
        };
        sim.check_graph().map_err(bad)?;
        Ok(sim)
    }

    /// Every screen must lead back to the entry through BACK edges and reach
    /// the search field.
    fn check_graph(&self) -> Result<(), String> {
        for (i, s) in self.screens.iter().enumerate() {
            let mut cur = i;
            let mut seen = HashSet::new();
            while cur != self.entry {
                if !seen.insert(cur) {
                    return Err(format!("screen '{}' cannot reach entry via BACK", s.name));
                }
                cur = self.screens[cur].back;
            }
        }
        let mut reach = vec![false; self.screens.len()];
        let mut stack = vec![self.entry];
        while let Some(s) = stack.pop() {
            if std::mem::replace(&mut reach[s], true) {
                continue;
            }
            stack.extend(self.successors(s));
        }
        if !reach[self.search_screen] {
            return Err("search field unreachable from entry".into());
        }
        Ok(())
    }

    pub(crate) fn successors(&self, s: usize) -> Vec<usize> {
        let scr = &self.screens[s];
        let mut out = vec![scr.back];
        for e in &scr.elements {
            out.extend(e.tap);
            out.extend(e.scroll.iter().flatten());
        }
        if let Some((_, t)) = scr.auto {
            out.push(t);
        }
        if s == self.search_screen {
            out.push(self.result_screen);
        }
        out.extend(self.popups.iter().filter(|p| p.host == s).map(|p| p.screen));
        out
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("notes.toml", include_str!("../../apps/notes.toml")),
    ("drive.toml", include_str!("../../apps/drive.toml")),
    ("news.toml", include_str!("../../apps/news.toml")),
    ("video.toml", include_str!("../../apps/video.toml")),
    ("shop.toml", include_str!("../../apps/shop.toml")),
    ("mail.toml", include_str!("../../apps/mail.toml")),
    ("social.toml", include_str!("../../apps/social.toml")),
    ("maps.toml", include_str!("../../apps/maps.toml")),
    ("music.toml", include_str!("../../apps/music.toml")),
    ("settings.toml", include_str!("../../apps/settings.toml")),
    ("recipes.toml", include_str!("../../apps/recipes.toml")),
    ("browser.toml", include_str!("../../apps/browser.toml")),
    ("store.toml", include_str!("../../apps/store.toml")),
];

/// Immutable set of apps keyed by id.
#[derive(Clone, Debug, Default)]
pub struct AppRegistry {
    apps: BTreeMap<String, Arc<SimApp>>,
}

impl AppRegistry {
    pub fn builtin() -> AppRegistry {
        let mut reg = AppRegistry::default();
        for (file, text) in BUILTIN {
            let app = SimApp::from_toml(text, file)
                .unwrap_or_else(|e| panic!("builtin app {file} is invalid: {e}"));
            reg.insert(app).expect("builtin app ids are unique");
        }
        reg
    }

    /// Loads every `*.toml` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<AppRegistry, AppError> {
        let io = |e| AppError::Io {
            path: dir.display().to_string(),
            source: e,
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        let mut reg = AppRegistry::default();
        for path in files {
            let text = std::fs::read_to_string(&path).map_err(|e| AppError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            reg.insert(SimApp::from_toml(&text, &path.display().to_string())?)?;
        }
        Ok(reg)
    }

    pub fn insert(&mut self, app: SimApp) -> Result<(), AppError> {
        let id = app.app_id().to_string();
        if self.apps.contains_key(&id) {
            return Err(AppError::Duplicate(id));
        }
        self.apps.insert(id, Arc::new(app));
        Ok(())
    }

    pub fn get(&self, app_id: &str) -> Result<Arc<SimApp>, AppError> {
        self.apps
            .get(app_id)
            .cloned()
            .ok_or_else(|| AppError::UnknownApp(app_id.to_string()))
    }

    pub fn remove(&mut self, app_id: &str) -> Option<Arc<SimApp>> {
        self.apps.remove(app_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.apps.keys().map(String::as_str)
    }

    pub fn apps_for(&self, task: TaskKind) -> Vec<Arc<SimApp>> {
        self.apps
            .values()
            .filter(|a| a.task() == task)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
schema_version = 1
app_id = "mini"
task = "search"
entry = "home"
search_field = "home/field"
result_screen = "results"
queries = ["cats"]

[[screens]]
id = "home"
[[screens.elements]]
key = "field"
kind = "INPUT_FIELD"
text = "Search"
bbox = [0.1, 0.05, 0.9, 0.1]

[[screens]]
id = "results"
back = "home"
[[screens.elements]]
key = "title"
kind = "TEXT"
text = "Results for {query}"
bbox = [0.1, 0.05, 0.9, 0.1]
"#;

    #[test]
    fn builtin_apps_load() {
        let reg = AppRegistry::builtin();
        assert!(reg.apps_for(TaskKind::Search).len() >= 12);
        assert_eq!(reg.apps_for(TaskKind::Install).len(), 1);
    }

    #[test]
    fn schema_version_is_mandatory() {
        let text = MINI.replace("schema_version = 1\n", "");
        let err = SimApp::from_toml(&text, "mini.toml").unwrap_err();
        assert!(err.to_string().contains("missing schema_version"), "{err}");
        let text = MINI.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(
            SimApp::from_toml(&text, "mini.toml"),
            Err(AppError::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn unknown_transition_target_rejected() {
        let text = MINI.replace("back = \"home\"", "back = \"nowhere\"");
        let err = SimApp::from_toml(&text, "mini.toml").unwrap_err();
        assert!(err.to_string().contains("unknown screen 'nowhere'"), "{err}");
    }

    #[test]
    fn back_cycle_rejected() {
        let text = MINI.replace("back = \"home\"", "back = \"results\"");
        let err = SimApp::from_toml(&text, "mini.toml").unwrap_err();
        assert!(err.to_string().contains("cannot reach entry"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let app = SimApp::from_toml(MINI, "mini.toml").unwrap();
        let again = SimApp::from_toml(&app.to_toml(), "again.toml").unwrap();
        assert_eq!(app.def, again.def);
    }

    #[test]
    fn load_dir_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mini.toml"), MINI).unwrap();
        std::fs::write(dir.path().join("readme.txt"), "ignored").unwrap();
        let reg = AppRegistry::load_dir(dir.path()).unwrap();
        assert_eq!(reg.ids().collect::<Vec<_>>(), vec!["mini"]);
        assert!(matches!(reg.get("other"), Err(AppError::UnknownApp(_))));
    }
}
