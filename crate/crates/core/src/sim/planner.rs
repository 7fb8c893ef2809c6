//! Breadth-first search over the abstract app state. Backs the scripted
//! demonstrator and the shortest-path checks on app graphs.

use std::collections::{HashMap, VecDeque};

use super::app::{Effect, SimApp, TaskKind};
use super::env::SimEnv;
use crate::model::{ActionType, AgentAction, ScreenRepresentation, ScrollDirection};

/// Screen plus the two bits of state that matter for reaching the goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PlanState {
    pub screen: usize,
    pub filled: bool,
    pub query_ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannedAction {
    pub action_type: ActionType,
    /// Id of the target element for element actions.
    pub element: Option<u32>,
    pub arg: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Node {
    At(PlanState),
    Goal,
}

fn edges(app: &SimApp, variant: Option<usize>, st: PlanState) -> Vec<(PlannedAction, Node)> {
    let scr = &app.screens[st.screen];
    let mut out = Vec::new();
    let at = |screen: usize, st: PlanState| Node::At(PlanState { screen, ..st });
    for e in &scr.elements {
        let visible = match &e.when {
            super::app::Condition::Always => true,
            super::app::Condition::Filled => st.filled,
            super::app::Condition::Empty => !st.filled,
            super::app::Condition::Variant(v) => variant == Some(*v),
        };
        if !visible {
            continue;
        }
        let click = PlannedAction {
            action_type: ActionType::Click,
            element: Some(e.id),
            arg: 0,
        };
        if st.screen == app.search_screen && e.id == app.search_element {
            if !st.filled {
                let next = PlanState {
                    screen: app.result_screen,
                    filled: true,
                    query_ok: true,
                };
                let node = if app.task() == TaskKind::Search {
                    Node::Goal
                } else {
                    Node::At(next)
                };
                out.push((
                    PlannedAction {
                        action_type: ActionType::FocusAndType,
                        element: Some(e.id),
                        arg: 0,
                    },
                    node,
                ));
            }
            continue;
        }
        match e.effect {
            Some(Effect::ClearField) => out.push((click, Node::At(PlanState { filled: false, ..st }))),
            Some(Effect::OpenApp) if st.query_ok => out.push((click, Node::Goal)),
            _ => {}
        }
        if let Some(t) = e.tap {
            out.push((click, at(t, st)));
        }
        for dir in ScrollDirection::ALL {
            if let Some(t) = e.scroll_target(dir) {
                out.push((
                    PlannedAction {
                        action_type: ActionType::Scroll,
                        element: Some(e.id),
                        arg: dir as usize,
                    },
                    at(t, st),
                ));
            }
        }
    }
    if scr.back != st.screen {
        out.push((
            PlannedAction {
                action_type: ActionType::Back,
                element: None,
                arg: 0,
            },
            at(scr.back, st),
        ));
    }
    if let Some((_, t)) = scr.auto {
        out.push((
            PlannedAction {
                action_type: ActionType::Wait,
                element: None,
                arg: 0,
            },
            at(t, st),
        ));
    }
    out
}

/// Shortest action sequence from `start` to task success, if any.
pub fn shortest_plan(app: &SimApp, variant: Option<usize>, start: PlanState) -> Option<Vec<PlannedAction>> {
    if app.task() == TaskKind::Search && start.screen == app.result_screen && start.query_ok {
        return Some(Vec::new());
    }
    let mut prev: HashMap<Node, (Node, PlannedAction)> = HashMap::new();
    let mut queue = VecDeque::from([Node::At(start)]);
    let start_node = Node::At(start);
    while let Some(node) = queue.pop_front() {
        let Node::At(st) = node else {
            let mut path = Vec::new();
            let mut cur = node;
            while cur != start_node {
                let (p, a) = prev[&cur];
                path.push(a);
                cur = p;
            }
            path.reverse();
            return Some(path);
        };
        for (a, next) in edges(app, variant, st) {
            if next != start_node && !prev.contains_key(&next) {
                prev.insert(next, (node, a));
                queue.push_back(next);
            }
        }
    }
    None
}

/// Every abstract state reachable from the entry screen of `app`, popups
/// included.
pub fn reachable_states(app: &SimApp, variant: Option<usize>) -> Vec<PlanState> {
    let mut starts = vec![PlanState {
        screen: app.entry,
        filled: false,
        query_ok: false,
    }];
    if app.def.prefill > 0.0 {
        starts.push(PlanState {
            screen: app.entry,
            filled: true,
            query_ok: false,
        });
    }
    let mut seen: Vec<PlanState> = Vec::new();
    let mut queue: VecDeque<PlanState> = starts.into();
    while let Some(st) = queue.pop_front() {
        if seen.contains(&st) {
            continue;
        }
        seen.push(st);
        let mut next: Vec<PlanState> = edges(app, variant, st)
            .into_iter()
            .filter_map(|(_, n)| match n {
                Node::At(s) => Some(s),
                Node::Goal => None,
            })
            .collect();
        if app.task() == TaskKind::Search && st.screen == app.search_screen && !st.filled {
            next.push(PlanState {
                screen: app.result_screen,
                filled: true,
                query_ok: true,
            });
        }
        for p in app.popups.iter().filter(|p| p.host == st.screen) {
            next.push(PlanState { screen: p.screen, ..st });
        }
        queue.extend(next);
    }
    seen
}

impl SimEnv {
    /// Abstract state of the running episode.
    pub fn plan_state(&self) -> Option<PlanState> {
        let ep = self.episode()?;
        let phrase = ep.cfg.utterance.phrase(0);
        Some(PlanState {
            screen: ep.screen,
            filled: !ep.field.is_empty(),
            query_ok: ep.query.is_some() && ep.query.as_deref() == phrase,
        })
    }

    /// Shortest plan from the current true state.
    pub fn plan(&self) -> Option<Vec<PlannedAction>> {
        let ep = self.episode()?;
        shortest_plan(&ep.app, ep.variant, self.plan_state()?)
    }

    /// The scripted demonstrator: first planned step, mapped onto the
    /// perceived screen. Falls back to WAIT while loading or when the target
    /// is not in the perception.
    pub fn oracle_action(&self, perceived: &ScreenRepresentation) -> AgentAction {
        if self.is_loading() {
            return AgentAction::global(ActionType::Wait);
        }
        let Some(step) = self.plan().and_then(|p| p.into_iter().next()) else {
            return AgentAction::global(ActionType::Wait);
        };
        let Ok(truth) = self.ground_truth() else {
            return AgentAction::global(ActionType::Wait);
        };
        match step.element {
            None => AgentAction::global(step.action_type),
            Some(id) => {
                let Some(want) = truth.elements.iter().find(|e| e.id == id) else {
                    return AgentAction::global(ActionType::Wait);
                };
                match perceived
                    .elements
                    .iter()
                    .position(|e| e.id == id && e.kind == want.kind && e.bbox == want.bbox)
                {
                    Some(i) => AgentAction::new(i, step.action_type, step.arg),
                    None => AgentAction::global(ActionType::Wait),
                }
            }
        }
    }
}
