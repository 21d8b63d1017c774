//! The multi-character actor-critic: text encoder, soft prompts,
//! per-character projections and head rows, and action sampling.

mod model;
pub mod vocab;

pub use model::{
    EncodedObs, HeadRow, LogitStack, ModelConfig, Tape, ThespianModel, PROMPT_STD,
};
pub use vocab::Vocab;

use rand::Rng;

use crate::grad::checkpoint::CheckpointError;
use crate::grad::Var;
use crate::rng::sample_categorical;
use crate::world::{ActionPattern, ActionTemplate, Observation};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint lacks parameter {0}")]
    MissingParameter(String),
    #[error("checkpoint has no prompts")]
    NoCharacters,
    #[error("checkpoint vocabulary has {found} tokens, world needs {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("unknown character {0}")]
    UnknownCharacter(String),
}

/// One sampled action and the graph handles the learner needs.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: ActionPattern,
    pub verb: usize,
    pub object: usize,
    /// Joint log-probability: verb plus object.
    pub log_prob: Var,
    pub value: Var,
    /// Entropy of the verb distribution plus that of the object distribution.
    pub entropy: Var,
}

fn entropy_of(tape: &mut Tape, logp: Var) -> Var {
    let g = &mut tape.graph;
    let p = g.exp(logp);
    let plogp = g.mul(p, logp);
    let s = g.sum(plogp);
    g.mul_scalar(s, -1.0)
}

/// Samples verb and object independently from log-probability vectors.
pub fn sample_action<R: Rng + ?Sized>(
    tape: &mut Tape,
    verbs: &[ActionTemplate],
    objects: &[String],
    verb_logp: Var,
    object_logp: Var,
    value: Var,
    rng: &mut R,
) -> Decision {
    let pv: Vec<f32> = tape.graph.value(verb_logp).iter().map(|l| l.exp()).collect();
    let po: Vec<f32> = tape.graph.value(object_logp).iter().map(|l| l.exp()).collect();
    let verb = sample_categorical(&pv, rng);
    let object = sample_categorical(&po, rng);
    let action = verbs[verb].fill(&objects[object]);
    let g = &mut tape.graph;
    let lv = g.pick(verb_logp, verb);
    let lo = g.pick(object_logp, object);
    let log_prob = g.add(lv, lo);
    let ev = entropy_of(tape, verb_logp);
    let eo = entropy_of(tape, object_logp);
    let entropy = tape.graph.add(ev, eo);
    Decision {
        action,
        verb,
        object,
        log_prob,
        value,
        entropy,
    }
}

/// Samples from one head row; its outputs are raw logits.
pub fn act<R: Rng + ?Sized>(
    model: &ThespianModel,
    tape: &mut Tape,
    row: &HeadRow,
    rng: &mut R,
) -> Decision {
    let verb_logp = tape.graph.log_softmax(row.verbs);
    let object_logp = tape.graph.log_softmax(row.objects);
    let value = tape.graph.pick(row.value, 0);
    sample_action(
        tape,
        model.verbs(),
        model.objects(),
        verb_logp,
        object_logp,
        value,
        rng,
    )
}

/// Anything that can choose an action for the current observation.
pub trait Policy {
    fn decide(&self, tape: &mut Tape, obs: &Observation, rng: &mut dyn rand::RngCore) -> Decision;
}

/// The core model playing one of its own character slots.
#[derive(Debug, Clone, Copy)]
pub struct CharacterPolicy<'a> {
    pub model: &'a ThespianModel,
    pub slot: usize,
}

impl Policy for CharacterPolicy<'_> {
    fn decide(&self, tape: &mut Tape, obs: &Observation, rng: &mut dyn rand::RngCore) -> Decision {
        let row = self.model.forward(tape, obs, self.slot);
        act(self.model, tape, &row, rng)
    }
}

/// A slot's projection and head row driven by a fixed external prompt.
#[derive(Debug, Clone)]
pub struct PromptedPolicy<'a> {
    pub model: &'a ThespianModel,
    pub slot: usize,
    pub prompt: crate::grad::Tensor,
}

impl Policy for PromptedPolicy<'_> {
    fn decide(&self, tape: &mut Tape, obs: &Observation, rng: &mut dyn rand::RngCore) -> Decision {
        let enc = self.model.encode(tape, obs);
        let p = tape.graph.constant(&self.prompt);
        let s = self.model.condition(tape, &enc, self.slot, p);
        let row = self.model.head_row(tape, s, self.slot);
        act(self.model, tape, &row, rng)
    }
}
