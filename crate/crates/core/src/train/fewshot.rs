use super::{
    a2c_update, evaluate, mean_opportunity, rollout, CurveRow, TrainConfig, TrainError,
};
use crate::agent::{CharacterPolicy, Tape, ThespianModel};
use crate::attention::{FewShotPolicy, ThespianAttention};
use crate::grad::Adam;
use crate::rng;
use crate::world::WorldSpec;

#[derive(Debug, Clone)]
pub struct FewShotOutcome {
    pub curve: Vec<CurveRow>,
    pub steps: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone)]
pub struct UnfrozenOutcome {
    /// The fine-tuned model, with the new character's slot appended.
    pub model: ThespianModel,
    /// Training rows for the new character plus `eval:<name>` rows tracking
    /// the pre-trained characters.
    pub curve: Vec<CurveRow>,
    pub steps: usize,
}

fn check_budget(config: &TrainConfig) -> Result<(), TrainError> {
    if config.step_budget == 0 {
        Err(TrainError::NoBudget)
    } else {
        Ok(())
    }
}

fn character_index(world: &WorldSpec, name: &str) -> Result<usize, TrainError> {
    world
        .character_index(name)
        .ok_or_else(|| TrainError::UnknownCharacter(name.to_string()))
}

/// Trains only the attention module and new prompt on `character`'s reward,
/// for `step_budget` environment steps. The core is read through a frozen
/// copy, so the caller's model is never written.
pub fn train_fewshot(
    world: &WorldSpec,
    core: &ThespianModel,
    attention: &mut ThespianAttention,
    character: &str,
    config: &TrainConfig,
) -> Result<FewShotOutcome, TrainError> {
    check_budget(config)?;
    if core.num_characters() < 2 {
        return Err(TrainError::TooFewCharacters {
            needed: 2,
            have: core.num_characters(),
        });
    }
    let wc = character_index(world, character)?;
    let mut frozen = core.clone();
    frozen.params_mut().set_all_requires_grad(false);
    let mut adam = Adam::new(config.lr_attention);
    let coef = config.fewshot_coefficients();
    let mut rng = rng::derive(config.seed, 0xf5);
    let mut curve = Vec::new();
    let mut steps = 0;
    let mut episode = 0;
    while steps < config.step_budget {
        let mut ep = {
            let policy = FewShotPolicy {
                core: &frozen,
                attention,
            };
            let cap = config.step_budget - steps;
            rollout(world, &policy, wc, &mut rng, Some(cap), Tape::recording())
        };
        steps += ep.len();
        let parts = a2c_update(
            &mut ep,
            attention.params_mut(),
            &mut adam,
            &coef,
            config.clip_norm,
        )?;
        curve.push(CurveRow {
            episode,
            step: steps,
            character: character.to_string(),
            score: ep.score(),
            opportunity_fraction: world.opportunity_report(&ep.trace)[wc],
            losses: Some(parts),
        });
        episode += 1;
    }
    Ok(FewShotOutcome {
        curve,
        steps,
        episodes: episode,
    })
}

/// Appends a fresh slot for `character` and fine-tunes every weight on its
/// reward. Every `config.eval_every` environment steps the pre-trained slots
/// are evaluated for `config.eval_games` games each.
pub fn train_unfrozen_baseline(
    world: &WorldSpec,
    pretrained: &ThespianModel,
    character: &str,
    config: &TrainConfig,
) -> Result<UnfrozenOutcome, TrainError> {
    check_budget(config)?;
    let wc = character_index(world, character)?;
    let mut model = pretrained.clone();
    model.params_mut().set_all_requires_grad(true);
    let mut rng = rng::derive(config.seed, 0xb5);
    let slot = model.add_character(character, &mut rng);
    let tracked: Vec<(usize, usize)> = pretrained
        .characters()
        .iter()
        .enumerate()
        .map(|(s, name)| Ok((s, character_index(world, name)?)))
        .collect::<Result<_, TrainError>>()?;
    let mut adam = Adam::new(config.lr_core);
    let coef = config.core_coefficients();
    let mut curve = Vec::new();
    let mut steps = 0;
    let mut episode = 0;
    let mut next_eval = 0;
    let track = |model: &ThespianModel, steps: usize, episode: usize, curve: &mut Vec<CurveRow>| {
        for &(s, twc) in &tracked {
            let policy = CharacterPolicy { model, slot: s };
            let res = evaluate(world, &policy, twc, config.eval_games, config.seed ^ 0xe7a1);
            curve.push(CurveRow {
                episode,
                step: steps,
                character: format!("eval:{}", world.characters[twc].name),
                score: res.iter().map(|r| r.score).sum::<f32>() / res.len() as f32,
                opportunity_fraction: mean_opportunity(&res, twc),
                losses: None,
            });
        }
    };
    while steps < config.step_budget {
        if config.eval_every > 0 && steps >= next_eval {
            track(&model, steps, episode, &mut curve);
            next_eval += config.eval_every;
        }
        let mut ep = {
            let policy = CharacterPolicy {
                model: &model,
                slot,
            };
            let cap = config.step_budget - steps;
            rollout(world, &policy, wc, &mut rng, Some(cap), Tape::recording())
        };
        steps += ep.len();
        let parts = a2c_update(
            &mut ep,
            model.params_mut(),
            &mut adam,
            &coef,
            config.clip_norm,
        )?;
        curve.push(CurveRow {
            episode,
            step: steps,
            character: character.to_string(),
            score: ep.score(),
            opportunity_fraction: world.opportunity_report(&ep.trace)[wc],
            losses: Some(parts),
        });
        episode += 1;
    }
    if config.eval_every > 0 {
        track(&model, steps, episode, &mut curve);
    }
    Ok(UnfrozenOutcome {
        model,
        curve,
        steps,
    })
}
