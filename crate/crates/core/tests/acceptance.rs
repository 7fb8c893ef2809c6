//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so the
//! lines reach the terminal; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uinav_core::augment::{augment_corpus, augment_demos, classify_elements, AugmentPolicy};
use uinav_core::encoding::encode_compact;
use uinav_core::macro_exec::{MacroContext, Timeouts};
use uinav_core::model::{
    ActionType, AgentAction, BBox, DemoEpisode, ElementKind, EpisodeConfig, MacroStatus, Utterance, UtteranceTemplate,
    ARG_VOCAB, MAX_ELEMENTS,
};
use uinav_core::net::check::{gradcheck_suite, random_screen, random_utterance};
use uinav_core::net::{loss_bc, Layout, LossSpec, NetDims, Network, PolicyParams};
use uinav_core::orchestrator::{
    behavior_diff, eval_config, evaluate, oracle_annotate, oracle_demo, run_iteration, scripted_demos, scripted_demos_without_rare,
    scripted_rare_screenshots, Candidate, IterationState, LoopConfig,
};
use uinav_core::pixel::{detect_blinking_cursor, CURSOR_MIN_REPEATS};
use uinav_core::rollout::{execute_step, run_episode, NetPolicy, OraclePolicy, Policy, RandomPolicy, EPISODE_CAP};
use uinav_core::sim::grid::cell_rect;
use uinav_core::sim::{mix64, sample_config, AppRegistry, CellRect, PixelGrid, SimEnv, TaskKind};
use uinav_core::train::{
    demo_buffer, dqfd_losses, train, Algo, DqfdConfig, EnvSource, ReplaySample, TargetCache, TrainConfig,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn registry() -> Arc<AppRegistry> {
    Arc::new(AppRegistry::builtin())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn gradient_exactness() -> Outcome {
    let t = Instant::now();
    let res = gradcheck_suite(NetDims::small(), 20, 500, 1).map_err(|e| e.to_string())?;
    let worst = |dqfd: bool| res.iter().filter(|r| r.0 == dqfd).map(|r| r.1.max_rel_error).fold(0.0, f64::max);
    let (bc, dq) = (worst(false), worst(true));
    let n_dq = res.iter().filter(|r| r.0).count();
    ensure(res.len() == 20 && n_dq > 0 && n_dq < 20, || format!("{n_dq} of {} instances use the DQfD loss", res.len()))?;
    ensure(bc < 1e-4 && dq < 1e-4, || format!("max relative error BC {bc:.2e}, DQfD {dq:.2e}"))?;
    let elapsed = t.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("20 instances, max rel error BC {bc:.1e} DQfD {dq:.1e}, {:.1}s", elapsed.as_secs_f64()))
}

fn xent(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[target]
}

fn mask_suite() -> Outcome {
    const GLOBALS: [ActionType; 3] = [ActionType::Wait, ActionType::Back, ActionType::PressEnter];
    let dims = NetDims::small();
    let layout = Layout::new(dims).unwrap();
    let arg_out: Vec<(usize, usize)> =
        ["arg_head.out.weight", "arg_head.out.bias"].iter().map(|n| layout.segment(n).unwrap()).collect();
    let cfg = Config { cases: 1000, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (any::<u64>(), 0usize..3, 0..MAX_ELEMENTS, 0..MAX_ELEMENTS, 0..ARG_VOCAB, 0..ARG_VOCAB);
    runner
        .run(&strategy, |(seed, t, e1, e2, a1, a2)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let screen = random_screen(&mut rng, 8);
            let input = encode_compact(&screen, &random_utterance(&mut rng)).unwrap();
            let params = PolicyParams::init(dims, seed).unwrap().to_f64();
            let net = Network::new(dims, &params).unwrap();
            let out = net.forward(&input);
            let t = GLOBALS[t];
            let (x, y) = (AgentAction::new(e1, t, a1), AgentAction::new(e2, t, a2));
            let l = loss_bc(&out, &x, true);
            prop_assert_eq!(l.total, l.type_loss);
            prop_assert!((l.type_loss - xent(&out.type_logits, t.index())).abs() < 1e-12);
            prop_assert_eq!(loss_bc(&out, &y, true), l);
            let grad = |a: AgentAction| {
                let mut g = vec![0.0; params.len()];
                net.loss_grad(&input, &[(1.0, LossSpec::Bc { target: a, use_masks: true })], &mut g);
                g
            };
            let gx = grad(x);
            prop_assert!(arg_out.iter().all(|&(o, n)| gx[o..o + n].iter().all(|g| *g == 0.0)));
            prop_assert_eq!(gx, grad(y));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 random global-action cases".into())
}

fn screenshot_loss_typing() -> Outcome {
    let reg = registry();
    let shots = scripted_rare_screenshots(&reg, TaskKind::Search, 8, 3).map_err(|e| e.to_string())?;
    ensure(!shots.is_empty(), || "no screenshot demos".into())?;
    let buf = demo_buffer(&[], &shots, 64);
    let batch: Vec<&ReplaySample> = buf.demo_samples().iter().collect();
    let dims = NetDims::default();
    let params = PolicyParams::init(dims, 5).unwrap().to_f64();
    let net = Network::new(dims, &params).unwrap();
    let full = DqfdConfig::default();
    let ablated = DqfdConfig { lambda_q: 0.0, ..full };
    let mut g1 = vec![0.0; params.len()];
    let mut g2 = vec![0.0; params.len()];
    let l1 = dqfd_losses(&net, &net, &batch, &full, true, &mut TargetCache::default(), &params, Some(&mut g1));
    let l2 = dqfd_losses(&net, &net, &batch, &ablated, true, &mut TargetCache::default(), &params, Some(&mut g2));
    ensure(l1.j_q == 0.0, || format!("J_Q = {}", l1.j_q))?;
    ensure(l1.j_e > 0.0, || "no classification loss".into())?;
    ensure(g1 == g2 && l1.total == l2.total, || "gradients differ from the J_Q-ablated run".into())?;
    Ok(format!("{} screenshot samples, J_Q = 0, gradients identical", batch.len()))
}

/// Steps `policy` through an episode checking atomicity, cancelation purity
/// and the typing contract. Returns the number of successful typing steps.
fn audit(env: &mut SimEnv, cfg: &EpisodeConfig, policy: &mut dyn Policy) -> Result<usize, String> {
    let (_, u) = env.reset(cfg).map_err(|e| e.to_string())?;
    let budget = Timeouts::default().budget();
    let (mut typed, mut steps) = (0, 0);
    let mut intervals: Vec<(u64, u64)> = Vec::new();
    while !env.is_success() && steps < EPISODE_CAP {
        let screen = env.perceive().unwrap();
        if let Some(&(a, b)) = intervals.iter().find(|&&(a, b)| screen.frame_id > a && screen.frame_id < b) {
            return Err(format!("{}: transitional frame {} inside ({a}, {b})", cfg.app_id, screen.frame_id));
        }
        let action = policy.act(env, &screen, &u);
        let before = env.clone();
        let t0 = env.tick().unwrap();
        let r = execute_step(env, &screen, &action, &u).map_err(|e| e.to_string())?;
        ensure(r.frames_consumed <= budget, || format!("{} frames over budget", r.frames_consumed))?;
        if r.status == MacroStatus::Cancelation {
            let mut expect = before;
            expect.step_frame().unwrap();
            ensure(env.state_digest() == expect.state_digest(), || format!("{}: cancelation changed the env", cfg.app_id))?;
            continue;
        }
        intervals.push((t0 + 1, t0 + 1 + r.frames_consumed as u64));
        if action.action_type == ActionType::FocusAndType && r.status == MacroStatus::Success {
            ensure(env.query() == u.phrase(action.action_arg), || format!("{}: field holds {:?}", cfg.app_id, env.query()))?;
            typed += 1;
        }
        steps += 1;
    }
    Ok(typed)
}

fn synthetic(tick: u64, paint: &[(u32, u32, u32, u32)]) -> PixelGrid {
    let mut g = PixelGrid::new(90, 160, 0x202020, tick);
    for &(x0, y0, x1, y1) in paint {
        g.fill_rect(CellRect { x0, y0, x1, y1 }, 0xFFFFFF);
    }
    g
}

fn macro_suite() -> Outcome {
    let t = Instant::now();
    let reg = registry();
    let mut env = SimEnv::new(reg.clone());
    let mut typed = 0;
    for seed in 0..80 {
        let task = if seed % 4 == 0 { TaskKind::Install } else { TaskKind::Search };
        let cfg = sample_config(&reg, task, seed);
        typed += audit(&mut env, &cfg, &mut OraclePolicy::with_noise(seed))?;
        audit(&mut env, &cfg, &mut RandomPolicy::new(seed))?;
    }
    ensure(typed >= 40, || format!("only {typed} typed steps"))?;

    // Acting on lagged perceptions without catching up: every cancelation
    // leaves state and frame untouched.
    let mut cancels = 0;
    for seed in 0..60 {
        let mut cfg = sample_config(&reg, TaskKind::Search, seed);
        cfg.perception_lag = 2;
        let (_, u) = env.reset(&cfg).unwrap();
        let mut policy = RandomPolicy::new(seed);
        for _ in 0..EPISODE_CAP {
            let screen = env.perceive().unwrap();
            let action = policy.act(&env, &screen, &u);
            if !action.action_type.is_element_action() {
                continue;
            }
            let (digest, frame) = (env.state_digest(), env.render_frame().unwrap());
            let r = MacroContext::new(&mut env, screen).unwrap().exec_macro(&action, &u).unwrap();
            if r.status == MacroStatus::Cancelation {
                ensure(env.state_digest() == digest && env.render_frame().unwrap() == frame, || {
                    format!("{}: cancelation changed the env", cfg.app_id)
                })?;
                cancels += 1;
            }
        }
    }
    ensure(cancels >= 10, || format!("only {cancels} cancelations"))?;

    // Exact phrase when several are offered.
    let mut cfg = sample_config(&reg, TaskKind::Search, 4);
    cfg.app_id = "maps".into();
    cfg.init_clicks = 0;
    cfg.perception_lag = 0;
    cfg.utterance = Utterance::new(UtteranceTemplate::SearchFor, vec!["museum".into(), "coffee shop".into()]).unwrap();
    let (s, u) = env.reset(&cfg).unwrap();
    let field = s.elements.iter().position(|e| e.kind == ElementKind::InputField).ok_or("maps has no field")?;
    let r = MacroContext::new(&mut env, s.clone())
        .unwrap()
        .exec_macro(&AgentAction::new(field, ActionType::FocusAndType, 1), &u)
        .unwrap();
    ensure(r.status == MacroStatus::Success && env.query() == Some("coffee shop"), || format!("typed {:?}", env.query()))?;

    // Cursor within 4 frames on fields the oracle types into.
    let mut found = 0;
    for seed in 0..40 {
        let cfg = sample_config(&reg, TaskKind::Search, seed);
        let mut env = SimEnv::new(reg.clone());
        env.reset(&cfg).unwrap();
        let mut oracle = OraclePolicy::new();
        for _ in 0..EPISODE_CAP {
            let s = env.perceive().unwrap();
            let a = oracle.act(&env, &s, &cfg.utterance);
            if a.action_type == ActionType::FocusAndType {
                let field = &s.elements[a.element_index];
                let mut probe = env.clone();
                let (w, h) = probe.grid_size().unwrap();
                let (x, y) = cell_rect(&field.bbox, w, h).center();
                probe.micro_tap(x, y).unwrap();
                let frames: Vec<PixelGrid> = std::iter::once(probe.render_frame().unwrap())
                    .chain((0..12).map(|_| {
                        probe.step_frame().unwrap();
                        probe.render_frame().unwrap()
                    }))
                    .collect();
                let scan = detect_blinking_cursor(frames, &field.bbox, CURSOR_MIN_REPEATS, 12);
                ensure(scan.found.is_some() && scan.frames_used <= 4, || {
                    format!("{}: cursor {:?} after {} frames", cfg.app_id, scan.found, scan.frames_used)
                })?;
                found += 1;
                break;
            }
            execute_step(&mut env, &s, &a, &cfg.utterance).unwrap();
        }
    }
    ensure(found >= 30, || format!("cursor checked on only {found} fields"))?;

    let field = BBox::new(0.1, 0.1, 0.9, 0.2).unwrap();
    let blink = |paint: &[(u32, u32, u32, u32)]| -> Vec<PixelGrid> {
        (0..12).map(|t| synthetic(t, if t % 2 == 1 { paint } else { &[] })).collect()
    };
    ensure(detect_blinking_cursor(blink(&[(20, 18, 21, 30)]), &field, 2, 12).found.is_some(), || "1-wide blink missed".into())?;
    ensure(detect_blinking_cursor(blink(&[(20, 18, 23, 30)]), &field, 2, 12).found.is_none(), || "3-wide flash accepted".into())?;
    let twice: Vec<PixelGrid> = (0..12).map(|t| synthetic(t, if t == 3 { &[(20, 18, 21, 30)] } else { &[] })).collect();
    ensure(detect_blinking_cursor(twice, &field, 3, 12).found.is_none(), || "sub-min_repeats candidate accepted".into())?;
    Ok(format!("80 audited episodes ({typed} typed, {cancels} cancelations), cursor on {found} fields, {:.1}s", t.elapsed().as_secs_f64()))
}

/// 16 scripted install demos, two per store query.
fn covering_demos(reg: &Arc<AppRegistry>, seed: u64) -> Result<Vec<DemoEpisode>, String> {
    let mut per: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for k in 0.. {
        if out.len() == 16 {
            break;
        }
        let cfg = sample_config(reg, TaskKind::Install, mix64(seed, k));
        let count = per.entry(cfg.utterance.phrases[0].clone()).or_default();
        if *count < 2 {
            if let Some(d) = oracle_demo(reg, &cfg, mix64(seed ^ 7, k)).map_err(|e| e.to_string())? {
                *count += 1;
                out.push(d);
            }
        }
    }
    Ok(out)
}

fn install_augmentation() -> Outcome {
    let reg = registry();
    let mut rates = [[0.0; 3]; 4];
    for rep in 0..3u64 {
        let demos = covering_demos(&reg, 100 + rep)?;
        for (k, (algo, aug)) in [(Algo::Bc, false), (Algo::Bc, true), (Algo::Dqfd, false), (Algo::Dqfd, true)].into_iter().enumerate() {
            let cfg = TrainConfig {
                augment: aug.then(|| AugmentPolicy::with_copies(99, rep)),
                ..TrainConfig::new(algo, rep)
            };
            let (p, _) = train(&demos, &[], None, &cfg).map_err(|e| e.to_string())?;
            rates[k][rep as usize] = evaluate(&p, &reg, TaskKind::Install, 200, 900 + rep).success_rate;
        }
    }
    let m: Vec<f64> = rates.iter().map(|r| mean(r)).collect();
    let line = format!("BC {:.3} -> {:.3} aug, DQfD {:.3} -> {:.3} aug", m[0], m[1], m[2], m[3]);
    ensure(m[1] > m[0] && m[3] > m[2] && m[3] >= 0.9, || line.clone())?;
    Ok(line)
}

fn training_options() -> Outcome {
    let reg = registry();
    let demos = scripted_demos_without_rare(&reg, TaskKind::Search, 150, 31).map_err(|e| e.to_string())?;
    let shots = scripted_rare_screenshots(&reg, TaskKind::Search, 20, 32).map_err(|e| e.to_string())?;
    let options = [(false, false, false), (true, false, false), (true, true, false), (true, true, true)];
    let mut m = Vec::new();
    for (mask, aug, shot) in options {
        let mut rates = Vec::new();
        for seed in 0..3u64 {
            let cfg = TrainConfig {
                use_loss_masks: mask,
                use_screenshot_demos: shot,
                augment: aug.then(|| AugmentPolicy::with_copies(99, seed)),
                ..TrainConfig::new(Algo::Dqfd, seed)
            };
            let (p, _) = train(&demos, &shots, None, &cfg).map_err(|e| e.to_string())?;
            rates.push(evaluate(&p, &reg, TaskKind::Search, 300, 700 + seed).success_rate);
        }
        m.push(mean(&rates));
    }
    let line = format!("{:.3} <= {:.3} (+mask) <= {:.3} (+aug) <= {:.3} (+shots)", m[0], m[1], m[2], m[3]);
    ensure(m.windows(2).all(|w| w[1] >= w[0] - 0.02), || line.clone())?;
    Ok(line)
}

fn within_three_sigma(hits: u64, n: u64, p: f64) -> bool {
    ((hits as f64 / n as f64) - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

fn augmentation_statistics() -> Outcome {
    let reg = registry();
    let mut sources = scripted_demos(&reg, TaskKind::Install, 16, 11).map_err(|e| e.to_string())?;
    let corpus = augment_corpus(&sources, &AugmentPolicy::default());
    ensure(corpus.len() == 1600, || format!("{} augmented episodes", corpus.len()))?;
    sources.extend(scripted_demos(&reg, TaskKind::Search, 16, 12).map_err(|e| e.to_string())?);
    let (mut n, mut text, mut bbox) = (0u64, 0u64, 0u64);
    for a in augment_corpus(&sources, &AugmentPolicy::with_copies(20, 3)).iter().filter(|a| a.is_augmented()) {
        for (s, t) in sources[a.source].steps.iter().zip(&a.episode.steps) {
            let (critical, irrelevant) = classify_elements(s);
            for (x, y) in s.screen.elements.iter().zip(&t.screen.elements) {
                if critical.contains(&x.id) {
                    ensure(serde_json::to_vec(x).unwrap() == serde_json::to_vec(y).unwrap(), || format!("critical {} altered", x.id))?;
                } else if irrelevant.contains(&x.id) {
                    n += 1;
                    text += (x.text != y.text) as u64;
                    bbox += (x.bbox != y.bbox) as u64;
                }
            }
        }
    }
    let line = format!("{n} irrelevant elements, text {:.4}, bbox {:.4}", text as f64 / n as f64, bbox as f64 / n as f64);
    ensure(n >= 10_000 && within_three_sigma(text, n, 0.5) && within_three_sigma(bbox, n, 0.8), || line.clone())?;
    Ok(line + ", 16 x 99 -> 1600")
}

fn determinism() -> Outcome {
    let reg = registry();
    let trace = || {
        let mut env = SimEnv::new(reg.clone());
        (0..20)
            .map(|i| {
                let cfg = eval_config(&reg, TaskKind::Search, 5, i);
                let t = run_episode(&mut env, &cfg, &mut RandomPolicy::new(i as u64), EPISODE_CAP).unwrap();
                (t.digest(), t.final_frame)
            })
            .collect::<Vec<_>>()
    };
    ensure(trace() == trace(), || "simulator traces differ".into())?;
    let demos = scripted_demos(&reg, TaskKind::Search, 4, 6).map_err(|e| e.to_string())?;
    let aug = || serde_json::to_string(&augment_demos(&demos, &AugmentPolicy::with_copies(5, 2))).unwrap();
    ensure(aug() == aug(), || "augmented corpora differ".into())?;
    let configs = |s: u64| sample_config(&reg, TaskKind::Search, s);
    let src = EnvSource { registry: reg.clone(), configs: &configs };
    for algo in [Algo::Bc, Algo::Dqfd] {
        let mut cfg = TrainConfig { steps: 60, augment: Some(AugmentPolicy::with_copies(3, 1)), ..TrainConfig::new(algo, 9) };
        cfg.dqfd.pretrain_steps = 40;
        cfg.dqfd.interaction_episodes = 3;
        let (a, la) = train(&demos, &[], Some(&src), &cfg).map_err(|e| e.to_string())?;
        let (b, lb) = train(&demos, &[], Some(&src), &cfg).map_err(|e| e.to_string())?;
        ensure(a == b && la.to_jsonl() == lb.to_jsonl(), || format!("{algo:?} checkpoints differ"))?;
        let ra = serde_json::to_string(&evaluate(&a, &reg, TaskKind::Search, 30, 3)).unwrap();
        let rb = serde_json::to_string(&evaluate(&b, &reg, TaskKind::Search, 30, 3)).unwrap();
        ensure(ra == rb, || "evaluation reports differ".into())?;
    }
    Ok("sim traces, augmented corpus, BC/DQfD checkpoints and eval reports identical".into())
}

fn orchestrator_loop() -> Outcome {
    let reg = registry();
    let cfg = LoopConfig {
        train: TrainConfig { augment: Some(AugmentPolicy::with_copies(99, 1)), ..TrainConfig::new(Algo::Bc, 1) },
        task: TaskKind::Search,
        eval_episodes: 200,
        eval_seed: 41,
    };
    let mut state = IterationState::default();
    let mut candidates: Vec<Candidate> =
        scripted_demos(&reg, TaskKind::Search, 2, 1).map_err(|e| e.to_string())?.into_iter().map(Candidate::Episode).collect();
    for k in 0..3 {
        let (next, _) = run_iteration(&state, candidates, &cfg, &reg).map_err(|e| e.to_string())?;
        candidates = oracle_annotate(&reg, next.last_report().unwrap(), 10, k);
        state = next;
    }
    let rates: Vec<f64> = state.reports.iter().map(|r| r.success_rate).collect();
    let line = rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" -> ");
    ensure(rates.len() == 3 && rates.windows(2).all(|w| w[1] > w[0]), || line.clone())?;

    // The agent's own greedy episodes are never admitted.
    let p = state.current.as_ref().unwrap();
    let params = p.params.to_f64();
    let mut env = SimEnv::new(reg.clone());
    for i in 0..10 {
        let mut agent = NetPolicy::new(p.params.dims, &params, p.acting_rule());
        let demo: DemoEpisode = run_episode(&mut env, &eval_config(&reg, TaskKind::Search, 7, i), &mut agent, EPISODE_CAP)
            .unwrap()
            .into_demo();
        ensure(!behavior_diff(p, &Candidate::Episode(demo)), || "greedy episode admitted".into())?;
    }
    Ok(format!("success {line}; greedy episodes rejected"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient exactness", gradient_exactness),
        ("loss mask suite", mask_suite),
        ("screenshot demo loss typing", screenshot_loss_typing),
        ("macro-action suite", macro_suite),
        ("install: augmentation helps BC and DQfD", install_augmentation),
        ("search: training options are monotone", training_options),
        ("augmentation statistics", augmentation_statistics),
        ("determinism", determinism),
        ("orchestrator loop", orchestrator_loop),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
