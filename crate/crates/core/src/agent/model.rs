use std::collections::HashMap;

use rand::Rng;

use super::vocab::Vocab;
use super::AgentError;
use crate::grad::checkpoint::{self, Entries};
use crate::grad::{Graph, GruVars, ParamId, ParamSet, Tensor, Var};
use crate::rng;
use crate::world::{ActionTemplate, Observation, WorldSpec};

pub const PROMPT_STD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub prompt_dim: usize,
    pub state_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            prompt_dim: 64,
            state_dim: 128,
        }
    }
}

/// A graph plus a memo of text encodings computed on it.
///
/// Identical strings inside one tape share a single encoder pass.
#[derive(Debug)]
pub struct Tape {
    pub graph: Graph,
    memo: HashMap<String, Var>,
}

impl Tape {
    pub fn recording() -> Self {
        Self {
            graph: Graph::new(),
            memo: HashMap::new(),
        }
    }

    pub fn inference() -> Self {
        Self {
            graph: Graph::inference(),
            memo: HashMap::new(),
        }
    }
}

/// The four encoded observation components.
#[derive(Debug, Clone, Copy)]
pub struct EncodedObs {
    /// `[4, H]`, one row per component.
    pub rows: Var,
    /// `[4H]`, the rows concatenated.
    pub flat: Var,
}

/// Policy and value outputs for every character slot.
#[derive(Debug, Clone, Copy)]
pub struct LogitStack {
    /// `[n, |V|]`
    pub verbs: Var,
    /// `[n, |O|]`
    pub objects: Var,
    /// `[n]`
    pub values: Var,
}

/// Outputs of a single character row.
#[derive(Debug, Clone, Copy)]
pub struct HeadRow {
    pub verbs: Var,
    pub objects: Var,
    pub value: Var,
}

#[derive(Debug, Clone, Copy)]
struct SlotIds {
    prompt: ParamId,
    proj: ParamId,
    verb_w: ParamId,
    verb_b: ParamId,
    object_w: ParamId,
    object_b: ParamId,
    value_w: ParamId,
    value_b: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    embed: ParamId,
    gru: [ParamId; 4],
    slots: Vec<SlotIds>,
}

/// Shared encoder, per-character projections and prompts, per-character head rows.
#[derive(Debug, Clone)]
pub struct ThespianModel {
    config: ModelConfig,
    vocab: Vocab,
    verbs: Vec<ActionTemplate>,
    objects: Vec<String>,
    characters: Vec<String>,
    params: ParamSet,
    ids: Ids,
}

fn slot_names(c: &str) -> [String; 8] {
    [
        format!("prompt/{c}"),
        format!("core/proj/{c}"),
        format!("core/head/verb/{c}/w"),
        format!("core/head/verb/{c}/b"),
        format!("core/head/object/{c}/w"),
        format!("core/head/object/{c}/b"),
        format!("core/head/value/{c}/w"),
        format!("core/head/value/{c}/b"),
    ]
}

const GRU_NAMES: [&str; 4] = [
    "core/gru/w_ih",
    "core/gru/w_hh",
    "core/gru/b_ih",
    "core/gru/b_hh",
];

impl ThespianModel {
    /// Fresh model over the world's vocabulary for the given characters.
    pub fn new(world: &WorldSpec, characters: &[&str], config: ModelConfig, seed: u64) -> Self {
        let mut rng = rng::derive(seed, 0x11);
        let vocab = Vocab::build(world.lexicon().iter().map(String::as_str));
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let mut params = ParamSet::new();
        params.add("core/embed", Tensor::normal(&[vocab.len(), e], 1.0, &mut rng));
        params.add(GRU_NAMES[0], Tensor::uniform_fan_in(&[3 * h, e], h, &mut rng));
        params.add(GRU_NAMES[1], Tensor::uniform_fan_in(&[3 * h, h], h, &mut rng));
        params.add(GRU_NAMES[2], Tensor::uniform_fan_in(&[3 * h], h, &mut rng));
        params.add(GRU_NAMES[3], Tensor::uniform_fan_in(&[3 * h], h, &mut rng));
        let mut model = Self {
            config,
            vocab,
            verbs: world.verbs.clone(),
            objects: world.object_vocabulary(),
            characters: Vec::new(),
            params,
            ids: Ids {
                embed: ParamId(0),
                gru: [ParamId(1), ParamId(2), ParamId(3), ParamId(4)],
                slots: Vec::new(),
            },
        };
        for c in characters {
            model.add_character(c, &mut rng);
        }
        model
    }

    /// Appends a character slot: prompt, projection and head rows.
    pub fn add_character<R: Rng + ?Sized>(&mut self, name: &str, rng: &mut R) -> usize {
        assert!(
            !self.characters.iter().any(|c| c == name),
            "character {name} already has a slot"
        );
        let ModelConfig {
            hidden_dim: h,
            prompt_dim: p,
            state_dim: d,
            ..
        } = self.config;
        let (nv, no) = (self.verbs.len(), self.objects.len());
        let [pn, proj, vw, vb, ow, ob, uw, ub] = slot_names(name);
        let ps = &mut self.params;
        let ids = SlotIds {
            prompt: ps.add(pn, Tensor::normal(&[p], PROMPT_STD, rng)),
            proj: ps.add(proj, Tensor::uniform_fan_in(&[d, 4 * h + p], 4 * h + p, rng)),
            verb_w: ps.add(vw, Tensor::uniform_fan_in(&[nv, d], d, rng)),
            verb_b: ps.add(vb, Tensor::uniform_fan_in(&[nv], d, rng)),
            object_w: ps.add(ow, Tensor::uniform_fan_in(&[no, d], d, rng)),
            object_b: ps.add(ob, Tensor::uniform_fan_in(&[no], d, rng)),
            value_w: ps.add(uw, Tensor::uniform_fan_in(&[1, d], d, rng)),
            value_b: ps.add(ub, Tensor::uniform_fan_in(&[1], d, rng)),
        };
        self.ids.slots.push(ids);
        self.characters.push(name.to_string());
        self.characters.len() - 1
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn verbs(&self) -> &[ActionTemplate] {
        &self.verbs
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn characters(&self) -> &[String] {
        &self.characters
    }

    pub fn num_characters(&self) -> usize {
        self.characters.len()
    }

    pub fn slot(&self, character: &str) -> Option<usize> {
        self.characters.iter().position(|c| c == character)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn prompt(&self, slot: usize) -> &Tensor {
        self.params.value(self.ids.slots[slot].prompt)
    }

    pub fn set_prompt(&mut self, slot: usize, value: Tensor) {
        assert_eq!(value.shape(), [self.config.prompt_dim], "prompt shape");
        *self.params.value_mut(self.ids.slots[slot].prompt) = value;
    }

    /// A prompt drawn from the initialization distribution.
    pub fn random_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        Tensor::normal(&[self.config.prompt_dim], PROMPT_STD, rng)
    }

    /// Final GRU state over the text's tokens; zeros for empty text.
    pub fn encode_text(&self, tape: &mut Tape, text: &str) -> Var {
        if let Some(&v) = tape.memo.get(text) {
            return v;
        }
        let g = &mut tape.graph;
        let mut h = g.constant(&Tensor::zeros(&[self.config.hidden_dim]));
        let tokens = self.vocab.encode(text);
        if !tokens.is_empty() {
            let table = g.param(&self.params, self.ids.embed);
            let [a, b, c, d] = self.ids.gru.map(|id| g.param(&self.params, id));
            let w = GruVars {
                w_ih: a,
                w_hh: b,
                b_ih: c,
                b_hh: d,
            };
            for t in tokens {
                let x = g.gather_row(table, t);
                h = g.gru_step(x, h, &w);
            }
        }
        tape.memo.insert(text.to_string(), h);
        h
    }

    pub fn encode(&self, tape: &mut Tape, obs: &Observation) -> EncodedObs {
        let parts = obs.components().map(|t| self.encode_text(tape, t));
        let rows = tape.graph.stack_rows(&parts);
        let flat = tape.graph.concat(&parts);
        EncodedObs { rows, flat }
    }

    /// Graph leaf for a slot's learned prompt.
    pub fn prompt_var(&self, tape: &mut Tape, slot: usize) -> Var {
        tape.graph.param(&self.params, self.ids.slots[slot].prompt)
    }

    /// State vector for `slot` from the observation and an arbitrary prompt.
    pub fn condition(&self, tape: &mut Tape, enc: &EncodedObs, slot: usize, prompt: Var) -> Var {
        let g = &mut tape.graph;
        let w = g.param(&self.params, self.ids.slots[slot].proj);
        let x = g.concat(&[enc.flat, prompt]);
        g.dense(x, w, None)
    }

    /// Row `slot` of the head outputs, computed from state `s`.
    pub fn head_row(&self, tape: &mut Tape, s: Var, slot: usize) -> HeadRow {
        let ids = self.ids.slots[slot];
        let g = &mut tape.graph;
        let mut dense = |w: ParamId, b: ParamId| {
            let w = g.param(&self.params, w);
            let b = g.param(&self.params, b);
            g.dense(s, w, Some(b))
        };
        let verbs = dense(ids.verb_w, ids.verb_b);
        let objects = dense(ids.object_w, ids.object_b);
        let value = dense(ids.value_w, ids.value_b);
        HeadRow {
            verbs,
            objects,
            value,
        }
    }

    /// Every head row from one state vector.
    pub fn logit_stack(&self, tape: &mut Tape, s: Var) -> LogitStack {
        let rows: Vec<HeadRow> = (0..self.num_characters())
            .map(|i| self.head_row(tape, s, i))
            .collect();
        let g = &mut tape.graph;
        let verbs = g.stack_rows(&rows.iter().map(|r| r.verbs).collect::<Vec<_>>());
        let objects = g.stack_rows(&rows.iter().map(|r| r.objects).collect::<Vec<_>>());
        let values = g.concat(&rows.iter().map(|r| r.value).collect::<Vec<_>>());
        LogitStack {
            verbs,
            objects,
            values,
        }
    }

    /// Encode, condition on the slot's own prompt, and read its head row.
    pub fn forward(&self, tape: &mut Tape, obs: &Observation, slot: usize) -> HeadRow {
        let enc = self.encode(tape, obs);
        let p = self.prompt_var(tape, slot);
        let s = self.condition(tape, &enc, slot, p);
        self.head_row(tape, s, slot)
    }

    pub fn to_entries(&self) -> Entries {
        checkpoint::entries_of(&self.params)
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Rebuilds a model for `world` from checkpoint entries. Dimensions and
    /// the character list come from the stored tensors.
    pub fn from_entries(world: &WorldSpec, entries: &Entries) -> Result<Self, AgentError> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| AgentError::MissingParameter(name.to_string()))
        };
        let embed = find("core/embed")?;
        let w_hh = find(GRU_NAMES[1])?;
        let characters: Vec<&str> = entries
            .iter()
            .filter_map(|(n, _)| n.strip_prefix("prompt/"))
            .filter(|c| !c.contains('/') && *c != "new")
            .collect();
        let first = characters.first().ok_or(AgentError::NoCharacters)?;
        let config = ModelConfig {
            embed_dim: embed.shape()[1],
            hidden_dim: w_hh.shape()[1],
            prompt_dim: find(&format!("prompt/{first}"))?.shape()[0],
            state_dim: find(&format!("core/proj/{first}"))?.shape()[0],
        };
        let mut model = Self::new(world, &characters, config, 0);
        if model.vocab.len() != embed.shape()[0] {
            return Err(AgentError::VocabMismatch {
                expected: model.vocab.len(),
                found: embed.shape()[0],
            });
        }
        let own: Entries = entries
            .iter()
            .filter(|(n, _)| model.params.find(n).is_some())
            .cloned()
            .collect();
        checkpoint::load_into(&mut model.params, &own)?;
        Ok(model)
    }
}
