//! Everything the page does, in plain Rust so it runs natively too.

use thespian::agent::{ModelConfig, Tape, ThespianModel};
use thespian::attention::blend;
use thespian::grad::checkpoint;
use thespian::grad::{Graph, Tensor};
use thespian::world::{
    maps, ActionPattern, EpisodeTrace, GameState, Observation, TraceStep, WorldSpec,
    NOTHING_HAPPENS,
};

/// Attention scores `[4, n]` and the blended distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub scores: Vec<f32>,
    pub probs: Vec<f32>,
}

/// Blends `n` rows of `logits` (each `actions` wide) under the attention of
/// four observation features `h_obs` `[4, d]` against character keys `h_act` `[n, d]`.
pub fn explore(
    h_obs: &[f32],
    h_act: &[f32],
    logits: &[f32],
    n: usize,
    m: f32,
    alpha: [f32; 4],
) -> Result<Exploration, String> {
    if n == 0 || h_act.len() % n != 0 || logits.len() % n != 0 {
        return Err(format!("{n} characters do not divide the key and logit rows"));
    }
    let d = h_act.len() / n;
    if d == 0 || h_obs.len() != 4 * d {
        return Err(format!("observation features need 4 rows of {d}"));
    }
    if !(m > 0.0) {
        return Err("smoothing must be positive".into());
    }
    let actions = logits.len() / n;
    let mut g = Graph::inference();
    let o = g.constant(&Tensor::matrix(4, d, h_obs));
    let k = g.constant(&Tensor::matrix(n, d, h_act));
    let a = g.constant(&Tensor::matrix(n, actions, logits));
    let b = blend(&mut g, o, k, a, m, &alpha);
    Ok(Exploration {
        scores: g.value(b.scores).to_vec(),
        probs: g.value(b.log_p).iter().map(|x| x.exp()).collect(),
    })
}

/// One head's view of the current observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadView {
    pub character: String,
    pub verbs: Vec<(String, f32)>,
    pub objects: Vec<(String, f32)>,
    pub value: f32,
}

pub struct Session {
    world: WorldSpec,
    character: usize,
    state: GameState,
    obs: Observation,
    trace: EpisodeTrace,
    model: ThespianModel,
    trained: bool,
}

fn top(names: impl Iterator<Item = String>, probs: &[f32], k: usize) -> Vec<(String, f32)> {
    let mut v: Vec<(String, f32)> = names.zip(probs.iter().copied()).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v.truncate(k);
    v
}

impl Session {
    /// A fresh game on a shipped map, with an untrained model until a
    /// checkpoint is loaded.
    pub fn new(map: &str, character: &str, seed: u64) -> Result<Self, String> {
        let text = maps::by_name(map).ok_or_else(|| format!("no map named {map}"))?;
        let world = WorldSpec::parse(text).map_err(|e| e.to_string())?;
        let character = world
            .character_index(character)
            .ok_or_else(|| format!("{map} has no character {character}"))?;
        let names: Vec<&str> = world.characters.iter().map(|c| c.name.as_str()).collect();
        let model = ThespianModel::new(&world, &names, ModelConfig::default(), seed);
        let (state, obs) = world.reset(seed);
        Ok(Self {
            world,
            character,
            state,
            obs,
            trace: EpisodeTrace::default(),
            model,
            trained: false,
        })
    }

    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), String> {
        let entries = checkpoint::decode(bytes).map_err(|e| e.to_string())?;
        self.model = ThespianModel::from_entries(&self.world, &entries).map_err(|e| e.to_string())?;
        self.trained = true;
        Ok(())
    }

    pub fn trained(&self) -> bool {
        self.trained
    }

    pub fn characters(&self) -> Vec<String> {
        self.world.characters.iter().map(|c| c.name.clone()).collect()
    }

    pub fn view(&self) -> String {
        format!("{}\n{}", self.obs.look, self.obs.inventory_text)
    }

    pub fn done(&self) -> bool {
        self.state.terminated
    }

    pub fn score(&self) -> f32 {
        self.trace.total_reward()
    }

    /// Runs one typed command and returns the game's reply.
    pub fn act(&mut self, command: &str) -> String {
        if self.done() {
            return "the game is over.".into();
        }
        let command = command.trim();
        if command == "look" {
            return self.obs.look.clone();
        }
        let Some(action) = ActionPattern::parse(command) else {
            return NOTHING_HAPPENS.into();
        };
        let step = self
            .world
            .step(&mut self.state, &action, self.character)
            .expect("checked for termination above");
        self.trace.steps.push(TraceStep {
            action,
            success: step.success,
            reward: step.reward,
        });
        self.trace.reached_exit = self.state.agent_room == self.world.exit_room;
        self.obs = step.observation;
        if step.reward > 0.0 {
            format!("{} (+{})", self.obs.feedback, step.reward)
        } else {
            self.obs.feedback.clone()
        }
    }

    /// Score and per-character opportunity so far.
    pub fn summary(&self) -> String {
        let def = &self.world.characters[self.character];
        let mut s = format!(
            "{} scored {} in {} steps",
            def.name,
            self.score(),
            self.trace.len()
        );
        for (c, f) in self.world.characters.iter().zip(self.world.opportunity_report(&self.trace)) {
            s += &format!("; {} {:.0}%", c.name, f * 100.0);
        }
        s
    }

    /// The `k` likeliest verbs and objects of every head.
    pub fn heads(&self, k: usize) -> Vec<HeadView> {
        let mut tape = Tape::inference();
        (0..self.model.num_characters())
            .map(|slot| {
                let row = self.model.forward(&mut tape, &self.obs, slot);
                let g = &mut tape.graph;
                let pv = g.softmax(row.verbs);
                let po = g.softmax(row.objects);
                HeadView {
                    character: self.model.characters()[slot].clone(),
                    verbs: top(
                        self.model.verbs().iter().map(|t| t.verb.clone()),
                        g.value(pv),
                        k,
                    ),
                    objects: top(self.model.objects().iter().cloned(), g.value(po), k),
                    value: g.scalar_value(row.value),
                }
            })
            .collect()
    }
}
