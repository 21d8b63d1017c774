use rand::RngCore;

use super::TrainError;
use crate::agent::{Policy, Tape};
use crate::grad::{clip_grad_norm, Adam, ParamSet, Var};
use crate::world::{ActionPattern, EpisodeTrace, Observation, TraceStep, WorldSpec};

/// One environment step as seen by the learner.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub action: ActionPattern,
    pub verb: usize,
    pub object: usize,
    pub log_prob: Var,
    pub entropy: Var,
    pub value: Var,
    pub reward: f32,
    pub done: bool,
    pub character: usize,
}

/// A played episode together with the tape its decisions were recorded on.
#[derive(Debug)]
pub struct Episode {
    pub tape: Tape,
    pub transitions: Vec<Transition>,
    pub trace: EpisodeTrace,
}

impl Episode {
    pub fn score(&self) -> f32 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Plays one fresh episode for `character`. `cap` stops early after that
/// many steps even if the world's own cap is larger.
pub fn rollout(
    world: &WorldSpec,
    policy: &dyn Policy,
    character: usize,
    rng: &mut dyn RngCore,
    cap: Option<usize>,
    tape: Tape,
) -> Episode {
    let mut tape = tape;
    let (mut state, mut obs) = world.reset(0);
    let mut transitions = Vec::new();
    let mut steps = Vec::new();
    let mut reached_exit = false;
    while !state.terminated && cap.is_none_or(|c| transitions.len() < c) {
        let d = policy.decide(&mut tape, &obs, rng);
        let out = world
            .step(&mut state, &d.action, character)
            .expect("live episode with a valid character");
        reached_exit |= state.agent_room == world.exit_room;
        steps.push(TraceStep {
            action: d.action.clone(),
            success: out.success,
            reward: out.reward,
        });
        transitions.push(Transition {
            observation: std::mem::replace(&mut obs, out.observation),
            action: d.action,
            verb: d.verb,
            object: d.object,
            log_prob: d.log_prob,
            entropy: d.entropy,
            value: d.value,
            reward: out.reward,
            done: out.done,
            character,
        });
    }
    Episode {
        tape,
        transitions,
        trace: EpisodeTrace {
            steps,
            reached_exit,
        },
    }
}

/// Monte-Carlo discounted returns, computed back to front.
pub fn discounted_returns(rewards: &[f32], discount: f32) -> Vec<f32> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + discount * acc;
        *o = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub discount: f32,
    pub value: f32,
    pub entropy: f32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f32,
    pub value: f32,
    pub entropy: f32,
}

/// Builds the actor-critic loss on the episode's tape. Advantages are
/// treated as constants.
pub fn a2c_loss(
    episode: &mut Episode,
    coef: &LossCoefficients,
) -> Result<(Var, LossParts), TrainError> {
    if episode.transitions.is_empty() {
        return Err(TrainError::EmptyEpisode);
    }
    let rewards: Vec<f32> = episode.transitions.iter().map(|t| t.reward).collect();
    let returns = discounted_returns(&rewards, coef.discount);
    let g = &mut episode.tape.graph;
    let mut policy_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut entropy_terms = Vec::new();
    for (t, ret) in episode.transitions.iter().zip(&returns) {
        let v = g.scalar_value(t.value);
        let adv = ret - v;
        policy_terms.push(g.mul_scalar(t.log_prob, -adv));
        let target = g.scalar(*ret);
        let diff = g.sub(target, t.value);
        value_terms.push(g.mul(diff, diff));
        entropy_terms.push(t.entropy);
    }
    let policy = g.add_n(&policy_terms);
    let value = g.add_n(&value_terms);
    let entropy = g.add_n(&entropy_terms);
    let parts = LossParts {
        policy: g.scalar_value(policy),
        value: g.scalar_value(value),
        entropy: g.scalar_value(entropy),
    };
    let vs = g.mul_scalar(value, coef.value);
    let es = g.mul_scalar(entropy, -coef.entropy);
    let loss = g.add_n(&[policy, vs, es]);
    Ok((loss, parts))
}

/// Loss, backward, clip, one optimizer step.
pub fn a2c_update(
    episode: &mut Episode,
    params: &mut ParamSet,
    optimizer: &mut Adam,
    coef: &LossCoefficients,
    clip: f32,
) -> Result<LossParts, TrainError> {
    let (loss, parts) = a2c_loss(episode, coef)?;
    let grads = episode.tape.graph.backward(loss)?;
    params.zero_grad();
    params.accumulate(&grads);
    clip_grad_norm(&mut [params], clip);
    optimizer.update(params);
    Ok(parts)
}
