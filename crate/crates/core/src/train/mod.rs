//! On-policy actor-critic training: character rotation, evaluation,
//! few-shot adaptation of the attention module, and the unfrozen baseline.

mod a2c;
mod curve;
mod fewshot;
mod multi;

pub use a2c::{
    a2c_loss, a2c_update, discounted_returns, rollout, Episode, LossCoefficients, LossParts,
    Transition,
};
pub use curve::{
    first_crossing, mean_series, to_csv, trailing_means, CurveRow, CURVE_HEADER,
};
pub use fewshot::{train_fewshot, train_unfrozen_baseline, FewShotOutcome, UnfrozenOutcome};
pub use multi::{train_multicharacter, train_single_head, MultiOutcome};

use crate::agent::{Policy, Tape};
use crate::grad::GradError;
use crate::rng;
use crate::world::WorldSpec;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("episode has no transitions")]
    EmptyEpisode,
    #[error("step budget must be positive")]
    NoBudget,
    #[error("need at least {needed} characters, have {have}")]
    TooFewCharacters { needed: usize, have: usize },
    #[error("world has no character {0}")]
    UnknownCharacter(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Which character plays game `g`: `games_per_character` games each, round robin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationSchedule {
    pub games_per_character: usize,
    pub characters: usize,
}

impl RotationSchedule {
    pub fn character(&self, game: usize) -> usize {
        (game / self.games_per_character) % self.characters
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Environment steps for few-shot and fine-tuning runs.
    pub step_budget: usize,
    pub discount: f32,
    pub lr_core: f32,
    pub lr_attention: f32,
    pub value_coef: f32,
    pub fewshot_value_coef: f32,
    pub entropy_coef: f32,
    pub clip_norm: f32,
    pub seed: u64,
    /// Evaluate every this many training games (0 disables).
    pub eval_every: usize,
    pub eval_games: usize,
    pub games_per_character: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 6000,
            step_budget: 3000,
            discount: 0.95,
            lr_core: 1e-3,
            lr_attention: 1e-2,
            value_coef: 0.25,
            fewshot_value_coef: 0.1,
            entropy_coef: 0.03,
            clip_norm: 5.0,
            seed: 0,
            eval_every: 250,
            eval_games: 20,
            games_per_character: 2,
        }
    }
}

impl TrainConfig {
    /// Checks the relations the few-shot setting depends on.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("discount", self.discount),
            ("lr_core", self.lr_core),
            ("lr_attention", self.lr_attention),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.discount > 1.0 {
            return Err(format!("discount must be at most 1, got {}", self.discount));
        }
        if self.lr_attention <= self.lr_core {
            return Err(format!(
                "lr_attention ({}) must exceed lr_core ({})",
                self.lr_attention, self.lr_core
            ));
        }
        if self.fewshot_value_coef >= self.value_coef {
            return Err(format!(
                "fewshot_value_coef ({}) must be below value_coef ({})",
                self.fewshot_value_coef, self.value_coef
            ));
        }
        if self.games_per_character == 0 {
            return Err("games_per_character must be positive".into());
        }
        Ok(())
    }

    pub fn core_coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            discount: self.discount,
            value: self.value_coef,
            entropy: self.entropy_coef,
        }
    }

    pub fn fewshot_coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            value: self.fewshot_value_coef,
            ..self.core_coefficients()
        }
    }
}

/// Outcome of one evaluation game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameResult {
    pub score: f32,
    pub steps: usize,
    /// Opportunity fraction for every character of the world.
    pub opportunity: Vec<f32>,
}

/// Plays `games` evaluation games for `character`, game `k` sampling from
/// its own stream derived from `seed`.
pub fn evaluate(
    world: &WorldSpec,
    policy: &dyn Policy,
    character: usize,
    games: usize,
    seed: u64,
) -> Vec<GameResult> {
    (0..games)
        .map(|k| {
            let mut r = rng::derive(seed, k as u64);
            let ep = rollout(world, policy, character, &mut r, None, Tape::inference());
            GameResult {
                score: ep.score(),
                steps: ep.len(),
                opportunity: world.opportunity_report(&ep.trace),
            }
        })
        .collect()
}

/// Mean of one column of per-game opportunity fractions.
pub fn mean_opportunity(results: &[GameResult], character: usize) -> f32 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| r.opportunity[character]).sum::<f32>() / results.len() as f32
}
