use std::sync::Arc;

use uinav_core::macro_exec::{MacroContext, Timeouts};
use uinav_core::model::{
    ActionType, AgentAction, BBox, ElementKind, EpisodeConfig, MacroResult, MacroStatus, Orientation, ScreenRepresentation,
    Utterance, UtteranceTemplate, Viewing,
};
use uinav_core::pixel::{detect_blinking_cursor, wait_screen_event, WaitMode, CURSOR_MIN_REPEATS, STABLE_THRESHOLD};
use uinav_core::rollout::{execute_step, Policy, RandomPolicy, EPISODE_CAP};
use uinav_core::sim::grid::cell_rect;
use uinav_core::sim::{sample_config, sample_config_in, AppRegistry, PixelGrid, SimEnv, TaskKind};

fn registry() -> Arc<AppRegistry> {
    Arc::new(AppRegistry::builtin())
}

fn config(reg: &AppRegistry, app: &str, seed: u64, lag: u32) -> EpisodeConfig {
    let mut cfg = sample_config_in(&reg.get(app).unwrap(), seed);
    cfg.viewing = Viewing {
        scale: 1.0,
        font_scale: 1.0,
        orientation: Orientation::Portrait,
    };
    cfg.init_clicks = 0;
    cfg.perception_lag = lag;
    cfg
}

fn started(app: &str, seed: u64, lag: u32) -> (SimEnv, ScreenRepresentation, Utterance) {
    let reg = registry();
    let mut env = SimEnv::new(reg.clone());
    let (s, u) = env.reset(&config(&reg, app, seed, lag)).unwrap();
    (env, s, u)
}

fn index(s: &ScreenRepresentation, pred: impl Fn(&uinav_core::model::UiElement) -> bool) -> usize {
    s.elements.iter().position(pred).unwrap_or_else(|| panic!("element missing from {s:?}"))
}

fn by_text(s: &ScreenRepresentation, text: &str) -> usize {
    index(s, |e| e.text == text)
}

fn exec(env: &mut SimEnv, s: &ScreenRepresentation, a: AgentAction, u: &Utterance) -> MacroResult {
    MacroContext::new(env, s.clone()).unwrap().exec_macro(&a, u).unwrap()
}

fn tap_element(env: &mut SimEnv, s: &ScreenRepresentation, i: usize) {
    let (w, h) = env.grid_size().unwrap();
    let (x, y) = cell_rect(&s.elements[i].bbox, w, h).center();
    env.micro_tap(x, y).unwrap();
}

#[test]
fn check_stale_examples() {
    let (mut env, s, _) = started("drive", 1, 0);
    let ctx = MacroContext::new(&mut env, s.clone()).unwrap();
    for i in 0..s.len() {
        assert!(ctx.check_stale(i).unwrap(), "untouched screen is fresh");
    }

    // The screen changes while perception still reports the old one.
    let (mut env, s, _) = started("drive", 1, 2);
    let recent = by_text(&s, "Recent");
    tap_element(&mut env, &s, recent);
    assert_eq!(env.perceive().unwrap().elements, s.elements);
    let ctx = MacroContext::new(&mut env, s.clone()).unwrap();
    assert!(!ctx.check_stale(by_text(&s, "Shared")).unwrap());

    // A checkbox flip repaints only the checkbox.
    let (mut env, s, _) = started("settings", 1, 0);
    let cb = index(&s, |e| e.kind == ElementKind::Checkbox);
    tap_element(&mut env, &s, cb);
    let ctx = MacroContext::new(&mut env, s.clone()).unwrap();
    assert!(!ctx.check_stale(cb).unwrap());
    assert!(ctx.check_stale(by_text(&s, "Settings")).unwrap());
}

/// Clicking a field focuses it without changing the screen; the blinking
/// cursor must not make later actions on the field look stale.
#[test]
fn focused_field_stays_actionable() {
    let (mut env, s, u) = started("notes", 2, 0);
    let field = index(&s, |e| e.kind == ElementKind::InputField);
    let r = exec(&mut env, &s, AgentAction::click(field), &u);
    assert_eq!(r.status, MacroStatus::Failure);
    for _ in 0..2 {
        let now = env.perceive().unwrap();
        let i = index(&now, |e| e.kind == ElementKind::InputField);
        let ctx = MacroContext::new(&mut env, now.clone()).unwrap();
        assert!(ctx.check_stale(i).unwrap());
        env.step_frame().unwrap();
    }
    let now = env.perceive().unwrap();
    let i = index(&now, |e| e.kind == ElementKind::InputField);
    let r = execute_step(&mut env, &now, &AgentAction::new(i, ActionType::FocusAndType, 0), &u).unwrap();
    assert_eq!(r.status, MacroStatus::Success);
    assert_eq!(env.query(), u.phrase(0));
}

#[test]
fn click_on_transition_succeeds() {
    let (mut env, s, u) = started("drive", 2, 0);
    let r = exec(&mut env, &s, AgentAction::click(by_text(&s, "Recent")), &u);
    assert_eq!(r.status, MacroStatus::Success);
    assert!(env.perceive().unwrap().elements.iter().any(|e| e.text == "Recent files"));
}

#[test]
fn click_on_vanished_element_is_canceled_without_side_effects() {
    let (mut env, s, u) = started("drive", 2, 2);
    tap_element(&mut env, &s, by_text(&s, "Recent"));
    let before = env.state_digest();
    let frame = env.render_frame().unwrap();
    let r = exec(&mut env, &s, AgentAction::click(by_text(&s, "Shared")), &u);
    assert_eq!(r, MacroResult::cancelation());
    assert_eq!(env.state_digest(), before);
    assert_eq!(env.render_frame().unwrap(), frame);
}

#[test]
fn focus_and_type_on_plain_text_fails() {
    let (mut env, s, u) = started("drive", 3, 0);
    let r = exec(&mut env, &s, AgentAction::new(by_text(&s, "My Drive"), ActionType::FocusAndType, 0), &u);
    assert_eq!(r.status, MacroStatus::Failure);
    assert!(r.frames_consumed <= Timeouts::default().budget());
    assert_eq!(env.query(), None);
}

#[test]
fn checkbox_click_is_verified_by_state() {
    let (mut env, s, u) = started("settings", 3, 0);
    let cb = index(&s, |e| e.kind == ElementKind::Checkbox);
    let r = exec(&mut env, &s, AgentAction::click(cb), &u);
    assert_eq!(r.status, MacroStatus::Success);
    let now = env.ground_truth().unwrap();
    let e = now.elements.iter().find(|e| e.id == s.elements[cb].id).unwrap();
    assert_eq!(e.state, s.elements[cb].state.toggled());
}

#[test]
fn scroll_reveals_the_next_page() {
    let (mut env, s, u) = started("mail", 3, 0);
    let list = index(&s, |e| e.kind == ElementKind::Image && e.bbox.y0 > 0.1 && e.bbox.y1 < 0.25);
    let r = exec(&mut env, &s, AgentAction::new(list, ActionType::Scroll, 1), &u);
    assert_eq!(r.status, MacroStatus::Success);
    assert_eq!(env.current_screen_name().unwrap(), "bottom");
}

#[test]
fn wait_always_succeeds_even_when_the_screen_never_settles() {
    let (mut env, s, u) = started("maps", 1, 0);
    let frames: Vec<PixelGrid> = {
        let mut probe = env.clone();
        (0..10)
            .map(|_| {
                probe.step_frame().unwrap();
                probe.render_frame().unwrap()
            })
            .collect()
    };
    let reference = env.render_frame().unwrap();
    let out = wait_screen_event(&reference, frames, WaitMode::Stable, STABLE_THRESHOLD, 10).unwrap();
    assert!(!out.is_ok(), "animated region never settles");
    let r = exec(&mut env, &s, AgentAction::global(ActionType::Wait), &u);
    assert_eq!(r, MacroResult::success(Timeouts::default().stable));

    let (mut env, s, u) = started("drive", 1, 0);
    let r = exec(&mut env, &s, AgentAction::global(ActionType::Wait), &u);
    assert_eq!(r.status, MacroStatus::Success);
    assert!(r.frames_consumed <= 3);
}

#[test]
fn no_op_globals_succeed() {
    let (mut env, s, u) = started("drive", 1, 0);
    for t in [ActionType::Back, ActionType::PressEnter] {
        let r = exec(&mut env, &s, AgentAction::global(t), &u);
        assert_eq!(r.status, MacroStatus::Success, "{t:?}");
        assert_eq!(env.current_screen_name().unwrap(), "home");
    }
}

#[test]
fn focus_and_type_types_the_chosen_phrase_exactly() {
    let reg = registry();
    let mut cfg = config(&reg, "maps", 4, 0);
    cfg.utterance = Utterance::new(UtteranceTemplate::SearchFor, vec!["museum".into(), "coffee shop".into()]).unwrap();
    let mut env = SimEnv::new(reg.clone());
    let (s, u) = env.reset(&cfg).unwrap();
    let field = index(&s, |e| e.kind == ElementKind::InputField);
    let r = exec(&mut env, &s, AgentAction::new(field, ActionType::FocusAndType, 1), &u);
    assert_eq!(r.status, MacroStatus::Success);
    assert_eq!(env.query(), Some("coffee shop"));
    assert_eq!(env.current_screen_name().unwrap(), "results");
}

/// A field still holding an old query would receive a concatenation; the
/// macro refuses to press ENTER on it.
#[test]
fn focus_and_type_into_prefilled_field_fails() {
    let reg = registry();
    let app = reg.get("video").unwrap();
    let mut checked = 0;
    for seed in 0..40 {
        let mut env = SimEnv::new(reg.clone());
        let (mut s, u) = env.reset(&config(&reg, "video", seed, 0)).unwrap();
        // Open the search screen.
        let icon = index(&s, |e| e.text == "search" && e.kind == ElementKind::Icon);
        assert_eq!(exec(&mut env, &s, AgentAction::click(icon), &u).status, MacroStatus::Success);
        s = env.perceive().unwrap();
        let Some(field) = s.elements.iter().position(|e| e.kind == ElementKind::InputField && e.text != "Search videos") else {
            continue;
        };
        let r = exec(&mut env, &s, AgentAction::new(field, ActionType::FocusAndType, 0), &u);
        assert_eq!(r.status, MacroStatus::Failure);
        assert_eq!(env.query(), None);
        assert!(app.def.prefill > 0.0);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} prefilled episodes");
}

/// Runs `policy` step by step, checking the macro contracts on every step.
fn audit(env: &mut SimEnv, cfg: &EpisodeConfig, policy: &mut dyn Policy) -> (usize, usize) {
    let (_, u) = env.reset(cfg).unwrap();
    let budget = Timeouts::default().budget();
    let mut typed = 0;
    let mut cancels = 0;
    let mut intervals: Vec<(u64, u64)> = Vec::new();
    let mut steps = 0;
    while !env.is_success() && steps < EPISODE_CAP {
        let screen = env.perceive().unwrap();
        for &(a, b) in &intervals {
            assert!(!(screen.frame_id > a && screen.frame_id < b), "transitional frame {} inside ({a}, {b})", screen.frame_id);
        }
        let action = policy.act(env, &screen, &u);
        let before = env.clone();
        let t0 = env.tick().unwrap();
        let r = execute_step(env, &screen, &action, &u).unwrap();
        assert!(r.frames_consumed <= budget);
        if r.status == MacroStatus::Cancelation {
            // Only the decision tick passed.
            let mut expect = before.clone();
            expect.step_frame().unwrap();
            assert_eq!(env.state_digest(), expect.state_digest());
            cancels += 1;
            continue;
        }
        let start = t0 + 1;
        intervals.push((start, start + r.frames_consumed as u64));
        if action.action_type == ActionType::FocusAndType && r.status == MacroStatus::Success {
            assert_eq!(env.query(), u.phrase(action.action_arg));
            typed += 1;
        }
        steps += 1;
    }
    (typed, cancels)
}

#[test]
fn macro_contracts_hold_on_oracle_and_random_runs() {
    let reg = registry();
    let mut env = SimEnv::new(reg.clone());
    let mut typed = 0;
    for seed in 0..120 {
        let task = if seed % 4 == 0 { TaskKind::Install } else { TaskKind::Search };
        let cfg = sample_config(&reg, task, seed);
        typed += audit(&mut env, &cfg, &mut uinav_core::rollout::OraclePolicy::with_noise(seed)).0;
        audit(&mut env, &cfg, &mut RandomPolicy::new(seed));
    }
    assert!(typed >= 60, "{typed}");
}

/// Acting on lagged perceptions without catching up produces cancelations,
/// each of which leaves the environment untouched.
#[test]
fn cancelation_is_pure() {
    let reg = registry();
    let mut cancels = 0;
    for seed in 0..60 {
        let mut cfg = sample_config(&reg, TaskKind::Search, seed);
        cfg.perception_lag = 2;
        let mut env = SimEnv::new(reg.clone());
        let (_, u) = env.reset(&cfg).unwrap();
        let mut policy = RandomPolicy::new(seed);
        for _ in 0..EPISODE_CAP {
            let screen = env.perceive().unwrap();
            let action = policy.act(&env, &screen, &u);
            if !action.action_type.is_element_action() {
                continue;
            }
            let digest = env.state_digest();
            let frame = env.render_frame().unwrap();
            let r = exec(&mut env, &screen, action, &u);
            if r.status == MacroStatus::Cancelation {
                assert_eq!(env.state_digest(), digest);
                assert_eq!(env.render_frame().unwrap(), frame);
                cancels += 1;
            }
        }
    }
    assert!(cancels >= 10, "{cancels}");
}

#[test]
fn global_actions_ignore_the_element_index() {
    let reg = registry();
    for seed in 0..30 {
        let cfg = sample_config(&reg, TaskKind::Search, seed);
        let mut env = SimEnv::new(reg.clone());
        let (s, u) = env.reset(&cfg).unwrap();
        for t in [ActionType::Wait, ActionType::Back, ActionType::PressEnter] {
            let outcomes: Vec<_> = [0, 3, 47]
                .into_iter()
                .map(|i| {
                    let mut e = env.clone();
                    let r = execute_step(&mut e, &s, &AgentAction::new(i, t, 0), &u).unwrap();
                    (r, e.state_digest(), e.render_frame().unwrap(), e.perceive().unwrap())
                })
                .collect();
            assert!(outcomes.windows(2).all(|w| w[0] == w[1]), "{t:?} seed {seed}");
        }
    }
}

#[test]
fn cursor_is_found_within_four_frames_on_every_field() {
    let reg = registry();
    let mut found = 0;
    for seed in 0..80 {
        let cfg = sample_config(&reg, TaskKind::Search, seed);
        let mut env = SimEnv::new(reg.clone());
        env.reset(&cfg).unwrap();
        let mut oracle = uinav_core::rollout::OraclePolicy::new();
        for _ in 0..EPISODE_CAP {
            let s = env.perceive().unwrap();
            let a = oracle.act(&env, &s, &cfg.utterance);
            if a.action_type == ActionType::FocusAndType {
                let field = s.elements[a.element_index].clone();
                let mut probe = env.clone();
                let (w, h) = probe.grid_size().unwrap();
                let r = cell_rect(&field.bbox, w, h);
                probe.micro_tap(r.center().0, r.center().1).unwrap();
                let frames: Vec<PixelGrid> = std::iter::once(probe.render_frame().unwrap())
                    .chain((0..12).map(|_| {
                        probe.step_frame().unwrap();
                        probe.render_frame().unwrap()
                    }))
                    .collect();
                let scan = detect_blinking_cursor(frames, &field.bbox, CURSOR_MIN_REPEATS, 12);
                let c = scan.found.unwrap_or_else(|| panic!("no cursor in {} {cfg:?}", cfg.app_id));
                assert!(scan.frames_used <= 4, "{}", scan.frames_used);
                assert!(r.contains(c.column, c.rows.0) && c.rows.1 <= r.y1);
                found += 1;
                break;
            }
            execute_step(&mut env, &s, &a, &cfg.utterance).unwrap();
        }
    }
    assert!(found >= 60, "{found}");
}

fn synthetic(tick: u64, paint: &[(u32, u32, u32, u32)]) -> PixelGrid {
    let mut g = PixelGrid::new(90, 160, 0x202020, tick);
    for &(x0, y0, x1, y1) in paint {
        g.fill_rect(uinav_core::sim::CellRect { x0, y0, x1, y1 }, 0xFFFFFF);
    }
    g
}

#[test]
fn cursor_detector_rejects_non_cursors() {
    let field = BBox::new(0.1, 0.1, 0.9, 0.2).unwrap();
    let blink = |paint: &[(u32, u32, u32, u32)]| -> Vec<PixelGrid> {
        (0..12).map(|t| if t % 2 == 1 { synthetic(t, paint) } else { synthetic(t, &[]) }).collect()
    };
    // A genuine 1-wide bar inside the field.
    assert!(detect_blinking_cursor(blink(&[(20, 18, 21, 30)]), &field, 2, 12).found.is_some());
    // Three cells wide.
    assert!(detect_blinking_cursor(blink(&[(20, 18, 23, 30)]), &field, 2, 12).found.is_none());
    // One cell tall.
    assert!(detect_blinking_cursor(blink(&[(20, 20, 21, 21)]), &field, 2, 12).found.is_none());
    // Outside the field.
    assert!(detect_blinking_cursor(blink(&[(20, 60, 21, 70)]), &field, 2, 12).found.is_none());
    // Appears once and stays: a single change event.
    let once: Vec<PixelGrid> = (0..12).map(|t| if t >= 3 { synthetic(t, &[(20, 18, 21, 30)]) } else { synthetic(t, &[]) }).collect();
    assert!(detect_blinking_cursor(once, &field, 2, 12).found.is_none());
    // Two change events but three required.
    let twice: Vec<PixelGrid> = (0..12).map(|t| if t == 3 { synthetic(t, &[(20, 18, 21, 30)]) } else { synthetic(t, &[]) }).collect();
    assert!(detect_blinking_cursor(twice.clone(), &field, 3, 12).found.is_none());
    assert!(detect_blinking_cursor(twice, &field, 2, 12).found.is_some());
    // A bar that moves every frame changes each column twice, once arriving
    // and once leaving, so it never reaches three appearances.
    let moving: Vec<PixelGrid> = (0..12).map(|t| synthetic(t, &[(12 + 4 * t as u32, 18, 13 + 4 * t as u32, 30)])).collect();
    assert!(detect_blinking_cursor(moving, &field, 3, 12).found.is_none());
}
