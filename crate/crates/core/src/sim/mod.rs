//! Deterministic simulated apps: screen graphs rendered to a coarse pixel
//! grid, with delayed perception.

pub mod app;
pub mod env;
pub mod grid;
pub mod planner;
pub mod words;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use app::{AppError, AppRegistry, SimApp, TaskKind};
pub use env::{mix64, MicroKey, SimEnv, SimError};
pub use grid::{CellRect, PixelGrid};

use crate::model::{EpisodeConfig, Orientation, Utterance, Viewing};

/// Draws an episode configuration for `task`. Pure in `(registry, task, seed)`.
pub fn sample_config(registry: &AppRegistry, task: TaskKind, seed: u64) -> EpisodeConfig {
    let apps = registry.apps_for(task);
    assert!(!apps.is_empty(), "no apps registered for {task:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A3C_0F1E_D00D_0001);
    let app = apps.choose(&mut rng).expect("non-empty");
    sample_config_for(app, &mut rng, seed)
}

/// Same as [`sample_config`] with the app fixed.
pub fn sample_config_in(app: &SimApp, seed: u64) -> EpisodeConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A3C_0F1E_D00D_0002);
    sample_config_for(app, &mut rng, seed)
}

fn sample_config_for(app: &SimApp, rng: &mut ChaCha8Rng, seed: u64) -> EpisodeConfig {
    let viewing = Viewing {
        scale: *Viewing::SCALES.choose(rng).expect("non-empty"),
        font_scale: *Viewing::FONT_SCALES.choose(rng).expect("non-empty"),
        orientation: if rng.random_bool(0.5) {
            Orientation::Portrait
        } else {
            Orientation::Landscape
        },
    };
    let phrase = app.def.queries.choose(rng).expect("validated non-empty").clone();
    let utterance = match app.task() {
        TaskKind::Search => Utterance::search_for(phrase),
        TaskKind::Install => Utterance::install(phrase),
    };
    EpisodeConfig {
        seed,
        app_id: app.app_id().to_string(),
        viewing,
        init_clicks: rng.random_range(0..=3),
        utterance,
        perception_lag: rng.random_range(0..=2),
    }
}
