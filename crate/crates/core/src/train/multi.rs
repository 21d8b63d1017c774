use super::{
    a2c_update, evaluate, mean_opportunity, rollout, CurveRow, RotationSchedule, TrainConfig,
    TrainError,
};
use crate::agent::{CharacterPolicy, Tape, ThespianModel};
use crate::grad::{Adam, Tensor};
use crate::rng;
use crate::world::WorldSpec;

#[derive(Debug, Clone)]
pub struct MultiOutcome {
    /// The model as of its best evaluation (or the final model if never evaluated).
    pub best: ThespianModel,
    pub best_eval: f32,
    pub best_episode: usize,
    pub curve: Vec<CurveRow>,
}

fn world_indices(world: &WorldSpec, names: &[String]) -> Result<Vec<usize>, TrainError> {
    names
        .iter()
        .map(|c| {
            world
                .character_index(c)
                .ok_or_else(|| TrainError::UnknownCharacter(c.clone()))
        })
        .collect()
}

/// Mean own-character opportunity over `eval_games` split across slots.
fn eval_rows(
    world: &WorldSpec,
    model: &ThespianModel,
    slots: &[(usize, usize)],
    config: &TrainConfig,
    episode: usize,
    step: usize,
    curve: &mut Vec<CurveRow>,
) -> f32 {
    let per = (config.eval_games / slots.len()).max(1);
    let mut total = 0.0;
    for &(slot, wc) in slots {
        let policy = CharacterPolicy { model, slot };
        let res = evaluate(world, &policy, wc, per, config.seed ^ 0xe7a1 ^ slot as u64);
        let opp = mean_opportunity(&res, wc);
        total += opp;
        curve.push(CurveRow {
            episode,
            step,
            character: format!("eval:{}", world.characters[wc].name),
            score: res.iter().map(|r| r.score).sum::<f32>() / res.len() as f32,
            opportunity_fraction: opp,
            losses: None,
        });
    }
    total / slots.len() as f32
}

/// `plays[g]` gives (model slot, world character whose reward is paid) for game g.
fn train_loop(
    world: &WorldSpec,
    model: &mut ThespianModel,
    eval_slots: &[(usize, usize)],
    plays: impl Fn(usize) -> (usize, usize),
    config: &TrainConfig,
) -> Result<MultiOutcome, TrainError> {
    let mut adam = Adam::new(config.lr_core);
    let coef = config.core_coefficients();
    let mut rng = rng::derive(config.seed, 0x7a1);
    let mut curve = Vec::new();
    let mut best: Option<(f32, usize, ThespianModel)> = None;
    let mut steps = 0;
    for game in 0..config.episodes {
        let (slot, wc) = plays(game);
        let mut ep = {
            let policy = CharacterPolicy { model, slot };
            rollout(world, &policy, wc, &mut rng, None, Tape::recording())
        };
        steps += ep.len();
        let opp = world.opportunity_report(&ep.trace)[wc];
        let parts = a2c_update(
            &mut ep,
            model.params_mut(),
            &mut adam,
            &coef,
            config.clip_norm,
        )?;
        curve.push(CurveRow {
            episode: game,
            step: steps,
            character: world.characters[wc].name.clone(),
            score: ep.score(),
            opportunity_fraction: opp,
            losses: Some(parts),
        });
        let done = game + 1;
        if config.eval_every > 0 && (done % config.eval_every == 0 || done == config.episodes) {
            let score = eval_rows(world, model, eval_slots, config, done, steps, &mut curve);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, done, model.clone()));
            }
        }
    }
    let (best_eval, best_episode, best) = best.unwrap_or((f32::NAN, config.episodes, model.clone()));
    Ok(MultiOutcome {
        best,
        best_eval,
        best_episode,
        curve,
    })
}

/// Trains every slot of `model` on its own character's reward, rotating
/// characters per the schedule, and keeps the best-evaluating snapshot.
pub fn train_multicharacter(
    world: &WorldSpec,
    model: &mut ThespianModel,
    config: &TrainConfig,
) -> Result<MultiOutcome, TrainError> {
    let n = model.num_characters();
    if n == 0 {
        return Err(TrainError::TooFewCharacters { needed: 1, have: 0 });
    }
    let wcs = world_indices(world, model.characters())?;
    let rotation = RotationSchedule {
        games_per_character: config.games_per_character,
        characters: n,
    };
    let slots: Vec<(usize, usize)> = wcs.iter().copied().enumerate().collect();
    train_loop(
        world,
        model,
        &slots,
        |g| {
            let s = rotation.character(g);
            (s, wcs[s])
        },
        config,
    )
}

/// Ablation: one head with its prompt zeroed and frozen, trained on every
/// character's reward in rotation. `model` must have exactly one slot.
pub fn train_single_head(
    world: &WorldSpec,
    model: &mut ThespianModel,
    characters: &[&str],
    config: &TrainConfig,
) -> Result<MultiOutcome, TrainError> {
    assert_eq!(model.num_characters(), 1, "single-head ablation uses one slot");
    let names: Vec<String> = characters.iter().map(|c| c.to_string()).collect();
    let wcs = world_indices(world, &names)?;
    let p = model.config().prompt_dim;
    model.set_prompt(0, Tensor::zeros(&[p]));
    let pid = model
        .params()
        .find(&format!("prompt/{}", model.characters()[0]))
        .expect("slot prompt");
    model.params_mut().set_requires_grad(pid, false);
    let rotation = RotationSchedule {
        games_per_character: config.games_per_character,
        characters: wcs.len(),
    };
    let slots: Vec<(usize, usize)> = wcs.iter().map(|&wc| (0, wc)).collect();
    train_loop(
        world,
        model,
        &slots,
        |g| (0, wcs[rotation.character(g)]),
        config,
    )
}
