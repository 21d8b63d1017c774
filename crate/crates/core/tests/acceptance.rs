//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p thespian --test acceptance -- 1 8 9` runs a subset.
//! Property criteria (1, 2, 8, 9 and the frozen half of 7) fail the process;
//! training-outcome criteria only report, unless `THESPIAN_STRICT` is set.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use thespian::agent::{CharacterPolicy, ModelConfig, PromptedPolicy, Tape, ThespianModel};
use thespian::attention::{blend, collect_stack, AttentionConfig, ThespianAttention};
use thespian::grad::gradcheck::check;
use thespian::grad::{checkpoint, Graph, GruVars, ParamSet, Tensor, Var};
use thespian::rng;
use thespian::train::{
    evaluate, first_crossing, mean_opportunity, mean_series, trailing_means, train_fewshot,
    train_multicharacter, train_single_head, train_unfrozen_baseline, GameResult, MultiOutcome,
    TrainConfig,
};
use thespian::world::{maps, ActionPattern, EpisodeTrace, GameState, TraceStep, WorldSpec};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EVAL_GAMES: usize = 100;
const ROGUE_MAX: f32 = 47.0;
const FEWSHOT_MAPS: [&str; 2] = ["adventurer-first", "alternating"];

struct Outcome {
    pass: bool,
    /// A failed property check, as opposed to a training outcome that fell short.
    hard: bool,
    detail: String,
}

impl Outcome {
    fn property(pass: bool, detail: String) -> Self {
        Self { pass, hard: !pass, detail }
    }

    fn training(pass: bool, detail: String) -> Self {
        Self { pass, hard: false, detail }
    }
}

fn world(name: &str) -> WorldSpec {
    WorldSpec::parse(maps::by_name(name).unwrap()).unwrap()
}

fn pct(x: f32) -> String {
    format!("{:.1}%", x * 100.0)
}

// ---------------------------------------------------------------- 1

type Build = Box<dyn Fn(&mut Graph, &ParamSet) -> Var>;

fn random_tensor(shape: &[usize], r: &mut rng::AgentRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
}

/// Pushes values away from the relu kink so finite differences stay on one side.
fn off_kink(t: &mut Tensor) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f32.copysign(*v);
        }
    }
}

const LAYERS: [&str; 21] = [
    "matmul", "dense", "add_bias", "add", "sub", "mul", "mul_scalar", "concat", "gather_row",
    "stack_rows", "select_row", "tanh", "relu", "sigmoid", "exp_log", "softmax", "log_softmax",
    "layer_norm", "reductions", "reshape_transpose", "gru_step",
];

/// A random graph whose core is `layer`, with random sizes and values,
/// reduced to a scalar through a fixed random projection.
fn random_graph(layer: &str, r: &mut rng::AgentRng) -> (ParamSet, Build) {
    let rows = r.random_range(2..5);
    let cols = r.random_range(2..6);
    let mut ps = ParamSet::new();
    let mut x = random_tensor(&[rows, cols], r);
    if layer == "relu" {
        off_kink(&mut x);
    }
    let xi = ps.add("x", x);
    let proj = random_tensor(&[64], r);
    let reduce = move |g: &mut Graph, y: Var| -> Var {
        let n = g.value(y).len();
        let flat = g.reshape(y, &[n]);
        let w = g.constant(&Tensor::vector(&proj.data()[..n]));
        let prod = g.mul(flat, w);
        g.sum(prod)
    };
    let build: Build = match layer {
        "matmul" => {
            let k = r.random_range(2..5);
            let w = ps.add("w", random_tensor(&[cols, k], r));
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let b = g.param(ps, w);
                let y = g.matmul(a, b);
                reduce(g, y)
            })
        }
        "dense" => {
            let out = r.random_range(2..5);
            let w = ps.add("w", random_tensor(&[out, cols], r));
            let b = ps.add("b", random_tensor(&[out], r));
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let v = g.select_row(a, 0);
                let (w, b) = (g.param(ps, w), g.param(ps, b));
                let y = g.dense(v, w, Some(b));
                reduce(g, y)
            })
        }
        "add_bias" => {
            let b = ps.add("b", random_tensor(&[cols], r));
            Box::new(move |g, ps| {
                let (a, b) = (g.param(ps, xi), g.param(ps, b));
                let y = g.add_bias(a, b);
                let y = g.tanh(y);
                reduce(g, y)
            })
        }
        "add" | "sub" | "mul" => {
            let other = ps.add("y", random_tensor(&[rows, cols], r));
            let op = layer.to_string();
            Box::new(move |g, ps| {
                let (a, b) = (g.param(ps, xi), g.param(ps, other));
                let y = match op.as_str() {
                    "add" => g.add(a, b),
                    "sub" => g.sub(a, b),
                    _ => g.mul(a, b),
                };
                let y = g.mul(y, a);
                reduce(g, y)
            })
        }
        "mul_scalar" => {
            let k = r.random_range(-3.0..3.0);
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let y = g.mul_scalar(a, k);
                let y = g.sigmoid(y);
                reduce(g, y)
            })
        }
        "concat" | "stack_rows" => {
            let other = ps.add("y", random_tensor(&[cols], r));
            let stack = layer == "stack_rows";
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let first = g.select_row(a, rows - 1);
                let b = g.param(ps, other);
                let y = if stack {
                    g.stack_rows(&[first, b, first])
                } else {
                    g.concat(&[first, b, first])
                };
                let y = g.tanh(y);
                reduce(g, y)
            })
        }
        "gather_row" | "select_row" => {
            let row = r.random_range(0..rows);
            let gather = layer == "gather_row";
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let v = if gather { g.gather_row(a, row) } else { g.select_row(a, row) };
                let y = g.mul(v, v);
                reduce(g, y)
            })
        }
        "tanh" | "relu" | "sigmoid" => {
            let op = layer.to_string();
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let y = match op.as_str() {
                    "tanh" => g.tanh(a),
                    "relu" => g.relu(a),
                    _ => g.sigmoid(a),
                };
                let y = g.mul(y, a);
                reduce(g, y)
            })
        }
        "exp_log" => Box::new(move |g, ps| {
            let a = g.param(ps, xi);
            let e = g.exp(a);
            let s = g.sigmoid(a);
            let l = g.log(s);
            let y = g.add(e, l);
            reduce(g, y)
        }),
        "softmax" | "log_softmax" => {
            let log = layer == "log_softmax";
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let a = g.mul_scalar(a, 2.0);
                let y = if log { g.log_softmax(a) } else { g.softmax(a) };
                reduce(g, y)
            })
        }
        "layer_norm" => {
            let gain = ps.add("gain", random_tensor(&[cols], r));
            let bias = ps.add("bias", random_tensor(&[cols], r));
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let (gn, bs) = (g.param(ps, gain), g.param(ps, bias));
                let y = g.layer_norm(a, gn, bs);
                reduce(g, y)
            })
        }
        "reductions" => {
            let index = r.random_range(0..rows * cols);
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let sq = g.mul(a, a);
                let m = g.mean_rows(sq);
                let s = g.sum(m);
                let mu = g.mean(a);
                let p = g.pick(a, index);
                let mp = g.mul(mu, p);
                let y = g.add_n(&[s, mp, p]);
                reduce(g, y)
            })
        }
        "reshape_transpose" => {
            let w = ps.add("w", random_tensor(&[rows, 3], r));
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let t = g.transpose(a);
                let b = g.param(ps, w);
                let y = g.matmul(t, b);
                let y = g.reshape(y, &[3 * cols]);
                let y = g.tanh(y);
                reduce(g, y)
            })
        }
        "gru_step" => {
            let h = r.random_range(2..5);
            let ids = [
                ps.add("w_ih", random_tensor(&[3 * h, cols], r)),
                ps.add("w_hh", random_tensor(&[3 * h, h], r)),
                ps.add("b_ih", random_tensor(&[3 * h], r)),
                ps.add("b_hh", random_tensor(&[3 * h], r)),
            ];
            Box::new(move |g, ps| {
                let a = g.param(ps, xi);
                let w = GruVars {
                    w_ih: g.param(ps, ids[0]),
                    w_hh: g.param(ps, ids[1]),
                    b_ih: g.param(ps, ids[2]),
                    b_hh: g.param(ps, ids[3]),
                };
                let mut state = g.constant(&Tensor::zeros(&[h]));
                for row in 0..rows {
                    let v = g.select_row(a, row);
                    state = g.gru_step(v, state, &w);
                }
                reduce(g, state)
            })
        }
        other => unreachable!("{other}"),
    };
    (ps, build)
}

fn criterion_1() -> Outcome {
    let mut r = rng::seeded(0xfd);
    let graphs = 3 * LAYERS.len();
    let mut worst = (0.0f32, "");
    let mut scalars = 0;
    for i in 0..graphs {
        let layer = LAYERS[i % LAYERS.len()];
        let (mut ps, build) = random_graph(layer, &mut r);
        let res = check(&mut ps, 1e-3, 1.0, build);
        scalars += res.checked;
        if res.max_rel_err > worst.0 {
            worst = (res.max_rel_err, layer);
        }
    }
    Outcome::property(
        worst.0 <= 1e-3,
        format!(
            "{graphs} graphs over {} layer types, {scalars} scalars, worst relative error {:.2e} ({})",
            LAYERS.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Names of parameters that receive a nonzero gradient from one head row.
fn touched(model: &ThespianModel, slot: usize) -> BTreeSet<String> {
    let w = world("base");
    let (_, obs) = w.reset(0);
    let mut tape = Tape::recording();
    let row = model.forward(&mut tape, &obs, slot);
    let g = &mut tape.graph;
    let a = g.sum(row.verbs);
    let b = g.sum(row.objects);
    let loss = g.add_n(&[a, b, row.value]);
    let grads = g.backward(loss).unwrap();
    model
        .params()
        .iter()
        .filter(|(id, _)| {
            grads
                .get(model.params(), *id)
                .is_some_and(|v| v.iter().any(|x| *x != 0.0))
        })
        .map(|(_, p)| p.name.clone())
        .collect()
}

fn criterion_2() -> Outcome {
    let w = world("base");
    let model = ThespianModel::new(&w, &["thief", "adventurer"], ModelConfig::default(), 7);
    let mut failures = Vec::new();
    for (slot, own, other) in [(0, "thief", "adventurer"), (1, "adventurer", "thief")] {
        let t = touched(&model, slot);
        if t.iter().any(|n| n.contains(other)) {
            failures.push(format!("{own} row reaches {other} parameters"));
        }
        if !t.contains(&format!("prompt/{own}")) {
            failures.push(format!("{own} row does not reach its prompt"));
        }
        for head in ["verb", "object", "value"] {
            if !t.contains(&format!("core/head/{head}/{own}/w")) {
                failures.push(format!("{own} row does not reach its {head} head"));
            }
        }
    }

    let fs = world("alternating");
    let mut core = ThespianModel::new(&fs, &["thief", "adventurer"], ModelConfig::default(), 3);
    core.params_mut().set_all_requires_grad(true);
    let before = checkpoint::encode(checkpoint::entries_of(core.params()));
    let mut attention = ThespianAttention::new(&core, AttentionConfig::default(), 3).unwrap();
    let attn_before = attention.params().content_hash();
    let config = TrainConfig {
        step_budget: 400,
        ..TrainConfig::default()
    };
    train_fewshot(&fs, &core, &mut attention, "rogue", &config).unwrap();
    let after = checkpoint::encode(checkpoint::entries_of(core.params()));
    if before != after {
        failures.push("core bytes changed during few-shot training".into());
    }
    if attention.params().content_hash() == attn_before {
        failures.push("attention did not train".into());
    }
    let detail = if failures.is_empty() {
        format!(
            "prompt and head gradients stay in their slot; core {} bytes identical after 400 few-shot steps",
            before.len()
        )
    } else {
        failures.join("; ")
    };
    Outcome::property(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 3, 4, 5

fn seed_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn base_runs() -> &'static Vec<MultiOutcome> {
    static RUNS: OnceLock<Vec<MultiOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let w = world("base");
        SEEDS
            .iter()
            .map(|&s| {
                eprintln!("  training prompted core, seed {s}");
                let mut m = ThespianModel::new(&w, &["thief", "adventurer"], ModelConfig::default(), s);
                train_multicharacter(&w, &mut m, &seed_config(s)).unwrap()
            })
            .collect()
    })
}

fn single_runs() -> &'static Vec<MultiOutcome> {
    static RUNS: OnceLock<Vec<MultiOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let w = world("base");
        SEEDS
            .iter()
            .map(|&s| {
                eprintln!("  training single head, seed {s}");
                let mut m = ThespianModel::new(&w, &["shared"], ModelConfig::default(), s);
                train_single_head(&w, &mut m, &["thief", "adventurer"], &seed_config(s)).unwrap()
            })
            .collect()
    })
}

/// (thief, adventurer) opportunity over evaluation games.
fn opportunities(results: &[GameResult]) -> (f32, f32) {
    (mean_opportunity(results, 0), mean_opportunity(results, 1))
}

fn eval_seed(seed: u64) -> u64 {
    0xacce_0000 + seed
}

fn criterion_3() -> Outcome {
    let w = world("base");
    let mut passing = 0;
    let mut lines = Vec::new();
    for (outcome, &seed) in base_runs().iter().zip(&SEEDS) {
        let m = &outcome.best;
        let t = opportunities(&evaluate(&w, &CharacterPolicy { model: m, slot: 0 }, 0, EVAL_GAMES, eval_seed(seed)));
        let a = opportunities(&evaluate(&w, &CharacterPolicy { model: m, slot: 1 }, 1, EVAL_GAMES, eval_seed(seed)));
        let ok = t.0 >= 0.8 && t.1 <= 0.1 && a.1 >= 0.8 && a.0 <= 0.1;
        passing += usize::from(ok);
        lines.push(format!(
            "seed {seed}: thief prompt {}/{}, adventurer prompt {}/{} (best at game {})",
            pct(t.0),
            pct(t.1),
            pct(a.0),
            pct(a.1),
            outcome.best_episode
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    Outcome::training(
        passing >= 4,
        format!("{passing}/5 seeds separate (thief/adventurer opportunity)"),
    )
}

fn criterion_4() -> Outcome {
    let w = world("base");
    let mut confused = 0;
    let mut mins = Vec::new();
    for (outcome, &seed) in single_runs().iter().zip(&SEEDS) {
        let policy = CharacterPolicy { model: &outcome.best, slot: 0 };
        let (t, a) = opportunities(&evaluate(&w, &policy, 0, EVAL_GAMES, eval_seed(seed)));
        println!("    seed {seed}: single head {}/{}", pct(t), pct(a));
        confused += usize::from(t.min(a) > 0.3);
        mins.push(t.min(a));
    }
    let mean = mins.iter().sum::<f32>() / mins.len() as f32;
    Outcome::training(
        confused >= 4,
        format!(
            "{confused}/5 seeds have minimum cross-character opportunity above 30% (mean minimum {})",
            pct(mean)
        ),
    )
}

fn criterion_5() -> Outcome {
    let w = world("base");
    let mut thief = Vec::new();
    let mut adv = Vec::new();
    for (outcome, &seed) in base_runs().iter().zip(&SEEDS) {
        let m = &outcome.best;
        let mut r = rng::derive(seed, 0x5eed);
        let policy = PromptedPolicy {
            model: m,
            slot: 0,
            prompt: m.random_prompt(&mut r),
        };
        let (t, a) = opportunities(&evaluate(&w, &policy, 0, EVAL_GAMES, eval_seed(seed)));
        println!("    seed {seed}: random prompt {}/{}", pct(t), pct(a));
        thief.push(t);
        adv.push(a);
    }
    let mt = thief.iter().sum::<f32>() / 5.0;
    let ma = adv.iter().sum::<f32>() / 5.0;
    Outcome::training(
        mt < 0.3,
        format!("random prompt through the thief slot: thief {}, adventurer {} (reported)", pct(mt), pct(ma)),
    )
}

// ---------------------------------------------------------------- 6, 7

struct FewShotMap {
    name: &'static str,
    core: ThespianModel,
    frozen_crossing: Option<usize>,
    unfrozen_crossing: Option<usize>,
    unfrozen_budget: usize,
    frozen_final: f32,
    /// Pre-trained evaluations before and after few-shot training, per seed.
    frozen_evals: Vec<(Vec<GameResult>, Vec<GameResult>)>,
    frozen_core_bytes: bool,
    /// (thief, adventurer) own opportunity before fine-tuning and after, per seed.
    unfrozen_drop: Vec<((f32, f32), (f32, f32))>,
}

fn pretrained_evals(w: &WorldSpec, m: &ThespianModel, seed: u64) -> Vec<GameResult> {
    let mut out = evaluate(w, &CharacterPolicy { model: m, slot: 0 }, 0, 20, eval_seed(seed));
    out.extend(evaluate(w, &CharacterPolicy { model: m, slot: 1 }, 1, 20, eval_seed(seed)));
    out
}

fn own_opportunity(w: &WorldSpec, m: &ThespianModel, seed: u64) -> (f32, f32) {
    let t = evaluate(w, &CharacterPolicy { model: m, slot: 0 }, 0, EVAL_GAMES, eval_seed(seed));
    let a = evaluate(w, &CharacterPolicy { model: m, slot: 1 }, 1, EVAL_GAMES, eval_seed(seed));
    (mean_opportunity(&t, 0), mean_opportunity(&a, 1))
}

fn fewshot_runs() -> &'static Vec<FewShotMap> {
    static RUNS: OnceLock<Vec<FewShotMap>> = OnceLock::new();
    RUNS.get_or_init(|| {
        FEWSHOT_MAPS
            .iter()
            .map(|&name| {
                let w = world(name);
                eprintln!("  pre-training core on {name}");
                let mut core = ThespianModel::new(&w, &["thief", "adventurer"], ModelConfig::default(), 0);
                let core = train_multicharacter(&w, &mut core, &seed_config(0)).unwrap().best;
                let bytes = checkpoint::encode(checkpoint::entries_of(core.params()));
                let threshold = 0.8 * ROGUE_MAX;
                let budget = TrainConfig::default().step_budget;

                let mut series = Vec::new();
                let mut frozen_evals = Vec::new();
                for &seed in &SEEDS {
                    let before = pretrained_evals(&w, &core, seed);
                    let mut attention = ThespianAttention::new(&core, AttentionConfig::default(), seed).unwrap();
                    let o = train_fewshot(&w, &core, &mut attention, "rogue", &seed_config(seed)).unwrap();
                    series.push(trailing_means(&o.curve, "rogue", 100, budget, 5));
                    frozen_evals.push((before, pretrained_evals(&w, &core, seed)));
                }
                let frozen = mean_series(&series);
                let frozen_crossing = first_crossing(&frozen, threshold);
                let frozen_final = frozen.last().map_or(0.0, |p| p.1);
                let frozen_core_bytes = bytes == checkpoint::encode(checkpoint::entries_of(core.params()));

                let unfrozen_budget = 3 * frozen_crossing.unwrap_or(budget);
                eprintln!("  {name}: unfrozen baseline for {unfrozen_budget} steps per seed");
                let mut series = Vec::new();
                let mut unfrozen_drop = Vec::new();
                for &seed in &SEEDS {
                    let config = TrainConfig {
                        step_budget: unfrozen_budget,
                        ..seed_config(seed)
                    };
                    let o = train_unfrozen_baseline(&w, &core, "rogue", &config).unwrap();
                    series.push(trailing_means(&o.curve, "rogue", 100, unfrozen_budget, 5));
                    unfrozen_drop.push((own_opportunity(&w, &core, seed), own_opportunity(&w, &o.model, seed)));
                }
                let unfrozen = mean_series(&series);
                FewShotMap {
                    name,
                    core,
                    frozen_crossing,
                    unfrozen_crossing: first_crossing(&unfrozen, threshold),
                    unfrozen_budget,
                    frozen_final,
                    frozen_evals,
                    frozen_core_bytes,
                    unfrozen_drop,
                }
            })
            .collect()
    })
}

fn criterion_6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in fewshot_runs() {
        let step = |c: Option<usize>| c.map_or("never".to_string(), |s| s.to_string());
        let ok = match m.frozen_crossing {
            Some(f) => m.unfrozen_crossing.map_or(true, |u| u >= 3 * f),
            None => false,
        };
        pass &= ok;
        parts.push(format!(
            "{}: frozen reaches {:.1} at step {} (final {:.1}), unfrozen at {} of {}",
            m.name,
            0.8 * ROGUE_MAX,
            step(m.frozen_crossing),
            m.frozen_final,
            step(m.unfrozen_crossing),
            m.unfrozen_budget
        ));
        println!("    {} core has {} characters", m.name, m.core.num_characters());
    }
    Outcome::training(pass, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let mut identical = true;
    let mut dropped = true;
    let mut parts = Vec::new();
    for m in fewshot_runs() {
        identical &= m.frozen_core_bytes && m.frozen_evals.iter().all(|(a, b)| a == b);
        let worst = m
            .unfrozen_drop
            .iter()
            .map(|((t0, a0), (t1, a1))| (t0 - t1).max(a0 - a1))
            .fold(f32::INFINITY, f32::min);
        let mean = m
            .unfrozen_drop
            .iter()
            .map(|((t0, a0), (t1, a1))| (t0 - t1).max(a0 - a1))
            .sum::<f32>()
            / m.unfrozen_drop.len() as f32;
        let n = m.unfrozen_drop.len() as f32;
        let thief_before = m.unfrozen_drop.iter().map(|((t, _), _)| t).sum::<f32>() / n;
        let adventurer_before = m.unfrozen_drop.iter().map(|((_, a), _)| a).sum::<f32>() / n;
        dropped &= worst >= 0.2;
        parts.push(format!(
            "{}: unfrozen drop min {:.1} pp, mean {:.1} pp (before: thief {:.2}, adventurer {:.2})",
            m.name,
            worst * 100.0,
            mean * 100.0,
            thief_before,
            adventurer_before
        ));
    }
    let detail = format!(
        "frozen evaluations {}; {}",
        if identical { "bit-identical" } else { "DIFFER" },
        parts.join("; ")
    );
    Outcome {
        pass: identical && dropped,
        hard: !identical,
        detail,
    }
}

// ---------------------------------------------------------------- 8

fn action_space(w: &WorldSpec) -> Vec<ActionPattern> {
    let objects = w.object_vocabulary();
    let mut out: Vec<ActionPattern> = Vec::new();
    for t in &w.verbs {
        if t.arity == 0 {
            out.push(t.fill(""));
        } else {
            out.extend(objects.iter().map(|o| t.fill(o)));
        }
    }
    out.push(ActionPattern::new("sing", None));
    out
}

#[derive(Default)]
struct EngineStats {
    states: usize,
    steps: usize,
    violations: Vec<String>,
}

impl EngineStats {
    fn note(&mut self, msg: String) {
        if self.violations.len() < 10 {
            self.violations.push(msg);
        }
    }
}

fn opportunity_oracle(w: &WorldSpec, trace: &EpisodeTrace) -> Vec<f32> {
    let done: BTreeSet<String> = trace
        .steps
        .iter()
        .filter(|s| s.success)
        .map(|s| s.action.to_string())
        .collect();
    w.characters
        .iter()
        .map(|c| {
            let hit = c
                .rewarded_actions
                .iter()
                .filter(|r| done.contains(&r.pattern.to_string()))
                .count();
            hit as f32 / c.rewarded_actions.len() as f32
        })
        .collect()
}

fn explore(
    w: &WorldSpec,
    actions: &[ActionPattern],
    character: usize,
    state: &GameState,
    trace: &EpisodeTrace,
    paid: &BTreeSet<String>,
    depth: usize,
    stats: &mut EngineStats,
) {
    stats.states += 1;
    if opportunity_oracle(w, trace) != w.opportunity_report(trace) {
        stats.note(format!("opportunity mismatch after {:?}", trace.steps.len()));
    }
    let mut cap = state.clone();
    cap.step_count = w.step_cap - 1;
    match w.step(&mut cap, &ActionPattern::new("wait", None), character) {
        Ok(o) if o.done => {}
        _ => stats.note("last step under the cap does not terminate".into()),
    }
    if w.step(&mut cap, &ActionPattern::new("wait", None), character).is_ok() {
        stats.note("step after termination accepted".into());
    }
    if depth == 0 {
        return;
    }
    let def = &w.characters[character];
    for a in actions {
        let mut s1 = state.clone();
        let mut s2 = state.clone();
        let o1 = w.step(&mut s1, a, character).unwrap();
        let o2 = w.step(&mut s2, a, character).unwrap();
        stats.steps += 2;
        if o1 != o2 || s1 != s2 {
            stats.note(format!("{a} is not deterministic"));
        }
        let key = a.to_string();
        let expected = if o1.success && !paid.contains(&key) {
            def.reward_for(a).unwrap_or(0.0)
        } else {
            0.0
        };
        let at_exit = s1.agent_room == w.exit_room;
        let exit = if at_exit { def.exit_reward } else { 0.0 };
        if o1.reward != expected + exit {
            stats.note(format!("{a} paid {} instead of {}", o1.reward, expected + exit));
        }
        if o1.done != (at_exit || s1.step_count >= w.step_cap) {
            stats.note(format!("{a} termination flag wrong"));
        }
        if !o1.success {
            let same = s1.agent_room == state.agent_room
                && s1.object_locations == state.object_locations
                && s1.worn == state.worn
                && s1.open_containers == state.open_containers
                && s1.dead_npcs == state.dead_npcs
                && s1.consumed_rewards == state.consumed_rewards
                && s1.step_count == state.step_count + 1;
            if !same {
                stats.note(format!("invalid {a} changed the world"));
            }
            continue;
        }
        let mut t = trace.clone();
        t.steps.push(TraceStep {
            action: a.clone(),
            success: true,
            reward: o1.reward,
        });
        let mut p = paid.clone();
        if def.reward_for(a).is_some() {
            p.insert(key);
        }
        if !o1.done {
            explore(w, actions, character, &s1, &t, &p, depth - 1, stats);
        } else {
            stats.states += 1;
            if opportunity_oracle(w, &t) != w.opportunity_report(&t) {
                stats.note("opportunity mismatch at termination".into());
            }
        }
    }
}

fn criterion_8() -> Outcome {
    let mut total = EngineStats::default();
    for (name, _) in maps::ALL {
        let w = world(name);
        let actions = action_space(&w);
        for c in 0..w.characters.len() {
            let (state, _) = w.reset(0);
            explore(
                &w,
                &actions,
                c,
                &state,
                &EpisodeTrace::default(),
                &BTreeSet::new(),
                4,
                &mut total,
            );
        }
    }
    let ok = total.violations.is_empty();
    let mut detail = format!(
        "{} maps, {} states, {} steps checked to depth 4",
        maps::ALL.len(),
        total.states,
        total.steps
    );
    if !ok {
        detail += &format!(": {}", total.violations.join("; "));
    }
    Outcome::property(ok, detail)
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut r = rng::seeded(0x9);
    let mut worst = 0.0f64;
    let inputs = 10_000;
    let row_error = |v: &[f32], cols: usize| -> f64 {
        v.chunks(cols)
            .map(|row| (row.iter().map(|&x| f64::from(x)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    };
    for i in 0..inputs {
        let mut g = Graph::inference();
        let scale = [0.1f32, 1.0, 10.0, 50.0][i % 4];
        let rows = r.random_range(1..6);
        let cols = r.random_range(2..40);
        let mut t = random_tensor(&[rows, cols], &mut r);
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
        let x = g.constant(&t);
        let s = g.softmax(x);
        worst = worst.max(row_error(g.value(s), cols));
        let ls = g.log_softmax(x);
        let back: Vec<f32> = g.value(ls).iter().map(|v| v.exp()).collect();
        worst = worst.max(row_error(&back, cols));

        let n = r.random_range(2..5);
        let d = r.random_range(1..9);
        let actions = r.random_range(2..30);
        let o = g.constant(&random_tensor(&[4, d], &mut r));
        let k = g.constant(&random_tensor(&[n, d], &mut r));
        let mut a = random_tensor(&[n, actions], &mut r);
        a.data_mut().iter_mut().for_each(|v| *v *= scale);
        let a = g.constant(&a);
        let m = r.random_range(0.05..10.0);
        let alpha: [f32; 4] = std::array::from_fn(|_| r.random_range(0.05..1.0));
        let b = blend(&mut g, o, k, a, m, &alpha);
        worst = worst.max(row_error(g.value(b.scores), n));
        let p: Vec<f32> = g.value(b.log_p).iter().map(|v| v.exp()).collect();
        worst = worst.max(row_error(&p, actions));
    }

    let w = world("alternating");
    let core = ThespianModel::new(&w, &["thief", "adventurer"], ModelConfig::default(), 1);
    let attention = ThespianAttention::new(&core, AttentionConfig::default(), 1).unwrap();
    let (_, obs) = w.reset(0);
    let mut tape = Tape::inference();
    let stack = collect_stack(&core, &mut tape, &obs).unwrap();
    let out = attention.forward(&mut tape, &stack);
    let g = &tape.graph;
    worst = worst.max(row_error(g.value(out.verb.scores), 2));
    worst = worst.max(row_error(g.value(out.object.scores), 2));
    let pv: Vec<f32> = g.value(out.verb.log_p).iter().map(|v| v.exp()).collect();
    worst = worst.max(row_error(&pv, pv.len()));

    Outcome::property(
        worst <= 1e-6,
        format!("{inputs} random inputs plus a live attention pass, worst |sum - 1| = {worst:.2e}"),
    )
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let strict = std::env::var_os("THESPIAN_STRICT").is_some();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "autodiff matches finite differences", criterion_1),
        (2, "prompt, head and frozen-core isolation", criterion_2),
        (3, "multi-character separation", criterion_3),
        (4, "single-head baseline confusion", criterion_4),
        (5, "random-prompt degradation", criterion_5),
        (6, "few-shot speedup", criterion_6),
        (7, "pre-trained preservation", criterion_7),
        (8, "engine properties", criterion_8),
        (9, "normalization", criterion_9),
    ];
    let mut hard = 0;
    let mut soft = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {n} {name}: {} [{secs:.1} s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            if o.hard {
                hard += 1;
            } else {
                soft += 1;
            }
        }
    }
    if hard > 0 || (strict && soft > 0) {
        std::process::exit(1);
    }
}
