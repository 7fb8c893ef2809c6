//! Atomic macro actions built from micro actions and frame checks.

use thiserror::Error;

use crate::model::{
    validate_action, ActionType, AgentAction, ElementState, InvalidAction, MacroResult,
    ScreenRepresentation, ScrollDirection, UiElement, Utterance,
};
use crate::pixel::{
    self, crop_matches, detect_blinking_cursor, wait_screen_event, PixelError, WaitMode,
    CHANGE_THRESHOLD, CURSOR_MIN_REPEATS, STABLE_THRESHOLD,
};
use crate::sim::grid::{cell_rect, paint_color, CellRect, PixelGrid};
use crate::sim::{MicroKey, SimEnv, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timeouts {
    pub change: u32,
    pub cursor: u32,
    pub stable: u32,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            change: 10,
            cursor: pixel::CURSOR_TIMEOUT,
            stable: 10,
        }
    }
}

impl Timeouts {
    /// Upper bound on frames any single macro may consume.
    pub fn budget(&self) -> u32 {
        self.change + self.cursor + self.stable
    }
}

#[derive(Debug, Error)]
pub enum MacroError {
    #[error("invalid action: {0}")]
    Invalid(#[from] InvalidAction),
    #[error(transparent)]
    Env(#[from] SimError),
    #[error("perceived frame {0} is no longer available")]
    FrameGone(u64),
}

/// Per-step executor state: the frame the agent's perception came from.
pub struct MacroContext<'a> {
    env: &'a mut SimEnv,
    pub cached_frame: PixelGrid,
    pub perceived: ScreenRepresentation,
    pub timeouts: Timeouts,
}

impl<'a> MacroContext<'a> {
    pub fn new(env: &'a mut SimEnv, perceived: ScreenRepresentation) -> Result<Self, MacroError> {
        let cached_frame = env
            .frame_at(perceived.frame_id)?
            .ok_or(MacroError::FrameGone(perceived.frame_id))?;
        Ok(MacroContext {
            env,
            cached_frame,
            perceived,
            timeouts: Timeouts::default(),
        })
    }

    pub fn env(&self) -> &SimEnv {
        self.env
    }

    fn rect(&self, e: &UiElement) -> CellRect {
        cell_rect(&e.bbox, self.cached_frame.width, self.cached_frame.height)
    }

    /// Compares the element's crop in the cached frame against the latest
    /// frame. No screen understanding runs on the latest frame. A blinking
    /// cursor inside a focused field is not a change.
    pub fn check_stale(&self, element_index: usize) -> Result<bool, MacroError> {
        let e = &self.perceived.elements[element_index];
        let latest = self.env.render_frame()?;
        Ok(crop_matches(&self.cached_frame, &latest, &e.bbox).unwrap_or(false))
    }

    pub fn exec_macro(&mut self, action: &AgentAction, utterance: &Utterance) -> Result<MacroResult, MacroError> {
        validate_action(action, &self.perceived, utterance)?;
        if action.action_type.is_element_action() && !self.check_stale(action.element_index)? {
            return Ok(MacroResult::cancelation());
        }
        let target = action.action_type.is_element_action().then(|| {
            let e = self.perceived.elements[action.element_index].clone();
            let r = self.rect(&e);
            (e, r)
        });
        let start = self.env.tick()?;
        let mut run = Run {
            env: self.env,
            start,
            budget: self.timeouts.budget(),
        };
        let t = self.timeouts;
        let ok = match action.action_type {
            ActionType::Click => {
                let (e, r) = target.expect("element action");
                run.click(&e, r, t)?
            }
            ActionType::FocusAndType => {
                let (e, r) = target.expect("element action");
                run.focus_and_type(&e, r, &utterance.phrases[action.action_arg], t)?
            }
            ActionType::Scroll => {
                let (x, y) = target.expect("element action").1.center();
                let dir = ScrollDirection::from_arg(action.action_arg).expect("validated");
                run.env.micro_scroll(x, y, dir)?;
                run.wait(WaitMode::Stable, STABLE_THRESHOLD, t.stable)?.is_ok()
            }
            ActionType::Wait => {
                run.wait(WaitMode::Stable, STABLE_THRESHOLD, t.stable)?;
                true
            }
            ActionType::Back | ActionType::PressEnter => {
                let key = if action.action_type == ActionType::Back {
                    MicroKey::Back
                } else {
                    MicroKey::Enter
                };
                let reference = run.env.render_frame()?;
                run.env.micro_key(key)?;
                run.settle_after(&reference, t, true)?;
                true
            }
        };
        let frames = (run.env.tick()? - start) as u32;
        Ok(if ok {
            MacroResult::success(frames)
        } else {
            MacroResult::failure(frames)
        })
    }
}

struct Run<'e> {
    env: &'e mut SimEnv,
    start: u64,
    budget: u32,
}

impl Run<'_> {
    fn remaining(&self) -> Result<u32, SimError> {
        let used = (self.env.tick()? - self.start) as u32;
        Ok(self.budget.saturating_sub(used))
    }

    /// Steps the environment and yields each new frame.
    fn stream(&mut self, limit: u32) -> impl Iterator<Item = PixelGrid> + '_ {
        let env = &mut *self.env;
        (0..limit).map_while(move |_| {
            env.step_frame().ok()?;
            env.render_frame().ok()
        })
    }

    fn wait(&mut self, mode: WaitMode, threshold: f64, timeout: u32) -> Result<pixel::WaitOutcome, MacroError> {
        let limit = timeout.min(self.remaining()?);
        let reference = self.env.render_frame()?;
        let out = wait_screen_event(&reference, self.stream(limit), mode, threshold, limit);
        Ok(out.unwrap_or(pixel::WaitOutcome::Timeout(limit)))
    }

    /// CHANGED against `reference` (the current frame counts as the first
    /// candidate), then a STABLE settle. With `fallback`, a missing change is
    /// tolerated.
    fn settle_after(&mut self, reference: &PixelGrid, t: Timeouts, fallback: bool) -> Result<bool, MacroError> {
        let limit = t.change.min(self.remaining()? + 1);
        let current = self.env.render_frame()?;
        let first = std::iter::once(current);
        let outcome = {
            let rest = self.stream(limit.saturating_sub(1));
            wait_screen_event(reference, first.chain(rest), WaitMode::Changed, CHANGE_THRESHOLD, limit)
        };
        let changed = match outcome {
            Ok(o) => o.is_ok(),
            Err(PixelError::DimensionMismatch(..)) => return Ok(false),
        };
        if changed || fallback {
            self.wait(WaitMode::Stable, STABLE_THRESHOLD, t.stable)?;
        }
        Ok(changed || fallback)
    }

    fn tap(&mut self, rect: CellRect) -> Result<(), SimError> {
        let (x, y) = rect.center();
        self.env.micro_tap(x, y)
    }

    fn click(&mut self, e: &UiElement, rect: CellRect, t: Timeouts) -> Result<bool, MacroError> {
        let reference = self.env.render_frame()?;
        self.tap(rect)?;
        if e.kind.is_toggle() {
            // State recognizer: the element must now carry the flipped paint.
            let flipped = match e.state {
                ElementState::Checked => ElementState::Unchecked,
                _ => ElementState::Checked,
            };
            let frame = self.env.render_frame()?;
            let (x, y) = rect.center();
            return Ok(frame.get(x, y) == paint_color(e.id, &e.text, flipped));
        }
        self.settle_after(&reference, t, false)
    }

    fn focus_and_type(&mut self, e: &UiElement, rect: CellRect, phrase: &str, t: Timeouts) -> Result<bool, MacroError> {
        self.tap(rect)?;
        let limit = t.cursor.min(self.remaining()?);
        let baseline = self.env.render_frame()?;
        let scan = {
            let frames = std::iter::once(baseline).chain(self.stream(limit));
            detect_blinking_cursor(frames, &e.bbox, CURSOR_MIN_REPEATS, limit)
        };
        if scan.found.is_none() {
            return Ok(false);
        }
        match self.env.micro_type(phrase) {
            Ok(()) => {}
            Err(SimError::NoFocus) => return Ok(false),
            Err(err) => return Err(err.into()),
        }
        if self.env.focused_text()?.as_deref() != Some(phrase) {
            return Ok(false);
        }
        let reference = self.env.render_frame()?;
        self.env.micro_key(MicroKey::Enter)?;
        self.settle_after(&reference, t, false)
    }
}
