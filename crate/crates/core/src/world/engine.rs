//! Deterministic state transitions and observation rendering.

use std::collections::BTreeSet;

use super::spec::{ActionPattern, Location, WorldSpec};

pub const NOTHING_HAPPENS: &str = "nothing happens.";

/// Where an object is during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Place {
    Room(usize),
    Npc(usize),
    Inside(usize),
    Carried,
}

impl From<Location> for Place {
    fn from(l: Location) -> Self {
        match l {
            Location::Room(r) => Place::Room(r),
            Location::Npc(n) => Place::Npc(n),
            Location::Inside(o) => Place::Inside(o),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    pub agent_room: usize,
    pub object_locations: Vec<Place>,
    pub worn: BTreeSet<usize>,
    pub open_containers: BTreeSet<usize>,
    pub dead_npcs: BTreeSet<usize>,
    /// Per character, the rewarded patterns already paid out this episode.
    pub consumed_rewards: Vec<BTreeSet<ActionPattern>>,
    pub step_count: u32,
    pub terminated: bool,
    pub seed: u64,
    prev_action: String,
    feedback: String,
}

impl GameState {
    pub fn inventory(&self) -> BTreeSet<usize> {
        self.object_locations
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == Place::Carried)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn carries(&self, object: usize) -> bool {
        self.object_locations[object] == Place::Carried
    }
}

/// The four text components the agent sees.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Observation {
    pub look: String,
    pub inventory_text: String,
    pub prev_action: String,
    pub feedback: String,
}

impl Observation {
    pub fn components(&self) -> [&str; 4] {
        [
            &self.look,
            &self.inventory_text,
            &self.prev_action,
            &self.feedback,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f32,
    pub done: bool,
    /// False when the action was invalid and only the step counter moved.
    pub success: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("step called on a terminated episode")]
    Terminated,
    #[error("character index {index} out of range for {count} characters")]
    BadCharacter { index: usize, count: usize },
}

/// One executed action as recorded for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub action: ActionPattern,
    pub success: bool,
    pub reward: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub reached_exit: bool,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f32 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn performed(&self) -> BTreeSet<&ActionPattern> {
        self.steps
            .iter()
            .filter(|s| s.success)
            .map(|s| &s.action)
            .collect()
    }
}

impl WorldSpec {
    pub fn reset(&self, seed: u64) -> (GameState, Observation) {
        let state = GameState {
            agent_room: self.start_room,
            object_locations: self.objects.iter().map(|o| o.location.into()).collect(),
            worn: BTreeSet::new(),
            open_containers: self
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.container && !o.closed)
                .map(|(i, _)| i)
                .collect(),
            dead_npcs: BTreeSet::new(),
            consumed_rewards: vec![BTreeSet::new(); self.characters.len()],
            step_count: 0,
            terminated: false,
            seed,
            prev_action: String::new(),
            feedback: String::new(),
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn observe(&self, state: &GameState) -> Observation {
        Observation {
            look: self.render_look(state),
            inventory_text: self.render_inventory(state),
            prev_action: state.prev_action.clone(),
            feedback: state.feedback.clone(),
        }
    }

    fn visible(&self, state: &GameState, object: usize) -> bool {
        let here = state.agent_room;
        match state.object_locations[object] {
            Place::Room(r) => r == here,
            Place::Inside(c) => {
                state.open_containers.contains(&c) && state.object_locations[c] == Place::Room(here)
            }
            Place::Npc(n) => self.npcs[n].location == here && !state.dead_npcs.contains(&n),
            Place::Carried => false,
        }
    }

    fn render_look(&self, state: &GameState) -> String {
        let room = &self.rooms[state.agent_room];
        let mut out = format!("{}.", room.name);
        if !room.description.is_empty() {
            out.push(' ');
            out.push_str(&room.description);
        }
        let mut seen: Vec<String> = Vec::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !self.visible(state, i) || matches!(state.object_locations[i], Place::Npc(_)) {
                continue;
            }
            if o.container {
                let status = if state.open_containers.contains(&i) { "open" } else { "closed" };
                seen.push(format!("{status} {}", o.name));
            } else {
                seen.push(o.name.clone());
            }
        }
        for (n, npc) in self.npcs.iter().enumerate() {
            if npc.location != state.agent_room {
                continue;
            }
            if state.dead_npcs.contains(&n) {
                seen.push(format!("dead {}", npc.name));
                continue;
            }
            let held: Vec<&str> = (0..self.objects.len())
                .filter(|&o| state.object_locations[o] == Place::Npc(n))
                .map(|o| self.objects[o].name.as_str())
                .collect();
            if held.is_empty() {
                seen.push(npc.name.clone());
            } else {
                seen.push(format!("{} with {}", npc.name, held.join(" and ")));
            }
        }
        if !seen.is_empty() {
            out.push_str(" you see: ");
            out.push_str(&seen.join(", "));
            out.push('.');
        }
        let exits: Vec<&str> = room.exits.iter().map(|(d, _)| d.as_str()).collect();
        if !exits.is_empty() {
            out.push_str(" exits: ");
            out.push_str(&exits.join(", "));
            out.push('.');
        }
        out
    }

    fn render_inventory(&self, state: &GameState) -> String {
        let items: Vec<String> = state
            .inventory()
            .into_iter()
            .map(|o| {
                if state.worn.contains(&o) {
                    format!("{} (worn)", self.objects[o].name)
                } else {
                    self.objects[o].name.clone()
                }
            })
            .collect();
        if items.is_empty() {
            "you carry nothing.".to_string()
        } else {
            format!("you carry: {}.", items.join(", "))
        }
    }

    /// Applies the action's effect if it is valid here. Returns feedback,
    /// or `None` for an invalid action.
    fn apply(&self, state: &mut GameState, action: &ActionPattern) -> Option<String> {
        let here = state.agent_room;
        for pre in &self.preconditions {
            if &pre.pattern == action {
                let needed = self.object_by_name(&pre.needs)?;
                if !state.carries(needed) {
                    return None;
                }
            }
        }
        let target = action.object.as_deref();
        match (action.verb.as_str(), target) {
            ("look", None) => Some(self.render_look(state)),
            ("wait", None) => Some("time passes.".to_string()),
            ("go", Some(dir)) => {
                let next = self.rooms[here].exit(dir)?;
                state.agent_room = next;
                Some(format!("you go {dir}."))
            }
            ("take", Some(name)) => {
                let o = self.object_by_name(name)?;
                let def = &self.objects[o];
                let loose = matches!(state.object_locations[o], Place::Room(_) | Place::Inside(_));
                if !(self.visible(state, o) && loose && def.portable && !def.owned) {
                    return None;
                }
                state.object_locations[o] = Place::Carried;
                Some(format!("you take the {name}."))
            }
            ("steal", Some(name)) => {
                let o = self.object_by_name(name)?;
                let def = &self.objects[o];
                let held = matches!(state.object_locations[o], Place::Npc(_));
                if !(self.visible(state, o) && def.portable && (held || def.owned)) {
                    return None;
                }
                state.object_locations[o] = Place::Carried;
                Some(format!("you steal the {name}."))
            }
            ("drop", Some(name)) => {
                let o = self.object_by_name(name)?;
                if !state.carries(o) {
                    return None;
                }
                state.object_locations[o] = Place::Room(here);
                state.worn.remove(&o);
                Some(format!("you drop the {name}."))
            }
            ("wear", Some(name)) => {
                let o = self.object_by_name(name)?;
                if !(state.carries(o) && self.objects[o].wearable && !state.worn.contains(&o)) {
                    return None;
                }
                state.worn.insert(o);
                Some(format!("you wear the {name}."))
            }
            ("open", Some(name)) => {
                let o = self.object_by_name(name)?;
                if !(self.objects[o].container
                    && state.object_locations[o] == Place::Room(here)
                    && !state.open_containers.contains(&o))
                {
                    return None;
                }
                state.open_containers.insert(o);
                Some(format!("you open the {name}."))
            }
            ("kill", Some(name)) => {
                let n = self.npc_by_name(name)?;
                if self.npcs[n].location != here || state.dead_npcs.contains(&n) {
                    return None;
                }
                state.dead_npcs.insert(n);
                for loc in state.object_locations.iter_mut() {
                    if *loc == Place::Npc(n) {
                        *loc = Place::Room(here);
                    }
                }
                Some(format!("you kill the {name}."))
            }
            ("donate", Some(name)) => {
                let o = self.object_by_name(name)?;
                if !state.carries(o) {
                    return None;
                }
                let receiver = (0..self.npcs.len())
                    .find(|&n| self.npcs[n].location == here && !state.dead_npcs.contains(&n))?;
                state.object_locations[o] = Place::Npc(receiver);
                state.worn.remove(&o);
                Some(format!(
                    "you donate the {name} to the {}.",
                    self.npcs[receiver].name
                ))
            }
            _ => None,
        }
    }

    /// Executes one action for the active character.
    pub fn step(
        &self,
        state: &mut GameState,
        action: &ActionPattern,
        character: usize,
    ) -> Result<StepOutcome, EngineError> {
        if state.terminated {
            return Err(EngineError::Terminated);
        }
        if character >= self.characters.len() {
            return Err(EngineError::BadCharacter {
                index: character,
                count: self.characters.len(),
            });
        }
        let was_verb_known = self.verbs.iter().any(|t| t.verb == action.verb);
        let mut scratch = state.clone();
        let feedback = if was_verb_known {
            self.apply(&mut scratch, action)
        } else {
            None
        };
        let success = feedback.is_some();
        if success {
            *state = scratch;
        }
        let mut reward = 0.0;
        if success {
            let def = &self.characters[character];
            if let Some(r) = def.reward_for(action) {
                if state.consumed_rewards[character].insert(action.clone()) {
                    reward += r;
                }
            }
        }
        let reached_exit = state.agent_room == self.exit_room;
        if reached_exit {
            reward += self.characters[character].exit_reward;
        }
        state.step_count += 1;
        state.terminated = reached_exit || state.step_count >= self.step_cap;
        state.prev_action = action.to_string();
        state.feedback = feedback.unwrap_or_else(|| NOTHING_HAPPENS.to_string());
        Ok(StepOutcome {
            observation: self.observe(state),
            reward,
            done: state.terminated,
            success,
        })
    }

    /// Fraction of each character's rewarded patterns performed in the trace.
    /// The exit reward is not an opportunity.
    pub fn opportunity_report(&self, trace: &EpisodeTrace) -> Vec<f32> {
        let performed = trace.performed();
        self.characters
            .iter()
            .map(|c| {
                let total = c.rewarded_actions.len();
                if total == 0 {
                    return 0.0;
                }
                let hit = c
                    .rewarded_actions
                    .iter()
                    .filter(|r| performed.contains(&r.pattern))
                    .count();
                hit as f32 / total as f32
            })
            .collect()
    }

    /// Every string the engine can put in an observation, for vocabulary building.
    pub fn lexicon(&self) -> Vec<String> {
        let mut out: Vec<String> = [
            "you see exits you carry nothing worn time passes",
            NOTHING_HAPPENS,
            "you go the to open closed dead with and",
            "you take steal drop wear kill donate",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        out.extend(self.verb_names());
        out.extend(self.object_vocabulary());
        for r in &self.rooms {
            out.push(r.name.clone());
            out.push(r.description.clone());
        }
        for n in &self.npcs {
            out.push(n.description.clone());
        }
        out
    }
}
