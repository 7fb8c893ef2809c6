//! Demo-collection sessions: reproduced failure configurations driven one
//! macro action at a time.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_action, AgentAction, DemoEpisode, InvalidAction, DemoStep, EpisodeConfig, MacroResult, MacroStatus, ScreenRepresentation,
    ScreenshotDemo, UiElement, Utterance,
};
use crate::rollout::{execute_step, RolloutError};
use crate::sim::{AppRegistry, PixelGrid, SimEnv, SimError};

use super::FailureRecord;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown failure {0}")]
    UnknownFailure(String),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} is finished")]
    Finished(u64),
    #[error("invalid action: {0}")]
    Invalid(#[from] InvalidAction),
    #[error(transparent)]
    Env(#[from] SimError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

/// What a client sees of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: u64,
    pub frame_id: u64,
    pub elements: Vec<UiElement>,
    pub pixels: PixelGrid,
    pub utterance: Utterance,
    pub last_result: Option<MacroResult>,
    pub steps: usize,
}

pub struct Session {
    id: u64,
    env: SimEnv,
    config: EpisodeConfig,
    utterance: Utterance,
    screen: ScreenRepresentation,
    steps: Vec<DemoStep>,
    last: Option<MacroResult>,
    finished: bool,
}

impl Session {
    /// Fresh environment reset to `config`.
    pub fn reproduce(registry: &Arc<AppRegistry>, config: &EpisodeConfig, id: u64) -> Result<Session, SessionError> {
        let mut env = SimEnv::new(registry.clone());
        let (screen, utterance) = env.reset(config)?;
        Ok(Session {
            id,
            env,
            config: config.clone(),
            utterance,
            screen,
            steps: Vec::new(),
            last: None,
            finished: false,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn env(&self) -> &SimEnv {
        &self.env
    }

    pub fn screen(&self) -> &ScreenRepresentation {
        &self.screen
    }

    pub fn state(&self) -> Result<SessionState, SessionError> {
        Ok(SessionState {
            session_id: self.id,
            frame_id: self.screen.frame_id,
            elements: self.screen.elements.clone(),
            pixels: self
                .env
                .frame_at(self.screen.frame_id)?
                .unwrap_or(self.env.render_frame()?),
            utterance: self.utterance.clone(),
            last_result: self.last,
            steps: self.steps.len(),
        })
    }

    /// Executes `action` against the screen last shown. CANCELATION records
    /// no step; the refreshed state is shown instead.
    pub fn act(&mut self, action: AgentAction) -> Result<MacroResult, SessionError> {
        if self.finished {
            return Err(SessionError::Finished(self.id));
        }
        let result = execute_step(&mut self.env, &self.screen, &action, &self.utterance)?;
        if result.status != MacroStatus::Cancelation {
            self.steps.push(DemoStep {
                screen: self.screen.clone(),
                utterance: self.utterance.clone(),
                action,
                result,
            });
        }
        self.last = Some(result);
        self.screen = self.env.perceive()?;
        Ok(result)
    }

    pub fn is_success(&self) -> bool {
        self.env.is_success()
    }

    pub fn finish(&mut self, success: bool) -> Result<DemoEpisode, SessionError> {
        if self.finished {
            return Err(SessionError::Finished(self.id));
        }
        self.finished = true;
        Ok(DemoEpisode {
            config: self.config.clone(),
            steps: self.steps.clone(),
            success,
        })
    }
}

/// Failures available for annotation plus live sessions.
pub struct SessionManager {
    registry: Arc<AppRegistry>,
    failures: Vec<FailureRecord>,
    sessions: BTreeMap<u64, Session>,
    next_id: u64,
}

impl SessionManager {
    pub fn new(registry: Arc<AppRegistry>, failures: Vec<FailureRecord>) -> Self {
        SessionManager {
            registry,
            failures,
            sessions: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn failures(&self) -> &[FailureRecord] {
        &self.failures
    }

    pub fn failure(&self, id: &str) -> Result<&FailureRecord, SessionError> {
        self.failures
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| SessionError::UnknownFailure(id.to_string()))
    }

    pub fn open(&mut self, failure_id: &str) -> Result<u64, SessionError> {
        let cfg = self.failure(failure_id)?.config.clone();
        self.open_config(&cfg)
    }

    pub fn open_config(&mut self, cfg: &EpisodeConfig) -> Result<u64, SessionError> {
        let id = self.next_id;
        let s = Session::reproduce(&self.registry, cfg, id)?;
        self.next_id += 1;
        self.sessions.insert(id, s);
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Result<&Session, SessionError> {
        self.sessions.get(&id).ok_or(SessionError::UnknownSession(id))
    }

    pub fn get_mut(&mut self, id: u64) -> Result<&mut Session, SessionError> {
        self.sessions.get_mut(&id).ok_or(SessionError::UnknownSession(id))
    }

    /// A screenshot demo labeling the final screen of a failure.
    pub fn screenshot_demo(&self, failure_id: &str, action: AgentAction) -> Result<ScreenshotDemo, SessionError> {
        let f = self.failure(failure_id)?;
        validate_action(&action, &f.final_screen, &f.config.utterance)?;
        Ok(ScreenshotDemo {
            step: DemoStep {
                screen: f.final_screen.clone(),
                utterance: f.config.utterance.clone(),
                action,
                result: MacroResult::success(0),
            },
            origin: f.id.clone(),
        })
    }
}
