use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use thespian::agent::{CharacterPolicy, PromptedPolicy, Tape, ThespianModel};
use thespian::attention::ThespianAttention;
use thespian::grad::checkpoint::{self, Entries, MAGIC};
use thespian::grad::ParamSet;
use thespian::rng;
use thespian::train::{
    self, mean_series, to_csv, trailing_means, GameResult, CURVE_HEADER,
};
use thespian::world::{ActionPattern, EpisodeTrace, TraceStep, WorldSpec, NOTHING_HAPPENS};

use crate::config::{parse_seeds, RunConfig, WorldSource};
use crate::error::write_file;
use crate::report::{read_reports, summary_table, EvalReport};
use crate::{CliError, EvalArgs, FewshotArgs, Mode, PlayArgs, ReportArgs, RunOptions, TrainArgs};

pub const MANIFEST_FORMAT: &str = "thespian-manifest 1";
/// Grid spacing and trailing window of averaged few-shot curves.
pub const MEAN_CURVE_EVERY: usize = 100;
pub const MEAN_CURVE_WINDOW: usize = 5;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn say(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn load_config(opts: &RunOptions) -> Result<RunConfig, CliError> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &opts.world {
        cfg.world = Some(WorldSource::parse(w));
    }
    if let Some(s) = &opts.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(o) = &opts.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn load_world(cfg: &RunConfig) -> Result<WorldSpec, CliError> {
    cfg.world
        .as_ref()
        .ok_or_else(|| CliError::Config("no world given (use --world or [run] world)".into()))?
        .load()
}

pub fn read_checkpoint(path: &Path) -> Result<Entries, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    checkpoint::read_file(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_core(path: &Path, world: &WorldSpec) -> Result<ThespianModel, CliError> {
    let entries = read_checkpoint(path)?;
    ThespianModel::from_entries(world, &entries)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn save_entries(path: &Path, entries: &Entries) -> Result<(), CliError> {
    let bytes = checkpoint::encode(entries.iter().map(|(n, t)| (n.as_str(), t)));
    write_file(path, &bytes)
}

fn hash_hex(set: &ParamSet) -> String {
    format!("{:016x}", set.content_hash())
}

fn manifest_head(command: &str, cfg: &RunConfig) -> String {
    format!(
        "format: {MANIFEST_FORMAT}\ncommand: {command}\ncheckpoint_format: {}\ncurve_header: {CURVE_HEADER}\n",
        String::from_utf8_lossy(MAGIC)
    ) + &format!(
        "seeds: {}\n",
        cfg.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    )
}

fn manifest_tail(cfg: &RunConfig) -> String {
    format!("\n# configuration\n{}", cfg.render())
}

fn split_list(s: &str) -> Vec<String> {
    s.split([',', ' '])
        .filter(|x| !x.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(&args.run)?;
    if let Some(c) = &args.characters {
        cfg.characters = split_list(c);
    }
    if let Some(e) = args.episodes {
        cfg.train.episodes = e;
    }
    cfg.validate()?;
    let world = load_world(&cfg)?;
    if cfg.characters.is_empty() {
        cfg.characters = world.characters.iter().map(|c| c.name.clone()).collect();
    }
    for c in &cfg.characters {
        if world.character_index(c).is_none() {
            return Err(CliError::Config(format!("world has no character {c}")));
        }
    }
    let names: Vec<&str> = cfg.characters.iter().map(String::as_str).collect();
    let mut manifest = manifest_head(
        if args.single_head { "train --single-head" } else { "train" },
        &cfg,
    );
    for &seed in &cfg.seeds {
        let mut tc = cfg.train.clone();
        tc.seed = seed;
        let outcome = if args.single_head {
            let mut model = ThespianModel::new(&world, &["shared"], cfg.model, seed);
            train::train_single_head(&world, &mut model, &names, &tc)
        } else {
            let mut model = ThespianModel::new(&world, &names, cfg.model, seed);
            train::train_multicharacter(&world, &mut model, &tc)
        }
        .map_err(runtime)?;
        let dir = cfg.out.join(format!("seed-{seed}"));
        save_entries(&dir.join("core.thsp"), &outcome.best.to_entries())?;
        write_file(&dir.join("curve.csv"), to_csv(&outcome.curve).as_bytes())?;
        let hash = hash_hex(outcome.best.params());
        manifest += &format!(
            "seed {seed}: checkpoint seed-{seed}/core.thsp hash {hash} best_episode {} best_eval {:.4}\n",
            outcome.best_episode, outcome.best_eval
        );
        say(
            out,
            &format!(
                "seed {seed}: best evaluation {:.3} at episode {}, saved {}\n",
                outcome.best_eval,
                outcome.best_episode,
                dir.join("core.thsp").display()
            ),
        )?;
    }
    manifest += &manifest_tail(&cfg);
    write_file(&cfg.out.join("manifest.txt"), manifest.as_bytes())
}

/// Plays `games` evaluation games under one prompt, split as evenly as
/// possible over `seeds` in order. A random prompt is drawn afresh per seed.
pub fn evaluate_prompt(
    world: &WorldSpec,
    model: &ThespianModel,
    prompt: &str,
    slot: usize,
    games: usize,
    seeds: &[u64],
) -> Result<EvalReport, CliError> {
    let mut results: Vec<GameResult> = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let games = games / seeds.len() + usize::from(i < games % seeds.len());
        if games == 0 {
            continue;
        }
        let batch = if prompt == "random" {
            let mut r = rng::derive(seed, 0x5eed);
            let policy = PromptedPolicy {
                model,
                slot,
                prompt: model.random_prompt(&mut r),
            };
            let wc = world.character_index(&model.characters()[slot]).unwrap_or(0);
            train::evaluate(world, &policy, wc, games, seed)
        } else {
            let s = model
                .slot(prompt)
                .ok_or_else(|| CliError::Config(format!("checkpoint has no character {prompt}")))?;
            let wc = world
                .character_index(prompt)
                .ok_or_else(|| CliError::Config(format!("world has no character {prompt}")))?;
            train::evaluate(world, &CharacterPolicy { model, slot: s }, wc, games, seed)
        };
        results.extend(batch);
    }
    Ok(EvalReport::from_results(prompt, world, &results))
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seeds = parse_seeds(&args.seeds)?;
    if args.games == 0 {
        return Err(CliError::Config("--games must be positive".into()));
    }
    let world = WorldSource::parse(&args.world).load()?;
    let model = load_core(&args.checkpoint, &world)?;
    let slot = match &args.slot {
        Some(name) => model
            .slot(name)
            .ok_or_else(|| CliError::Config(format!("checkpoint has no character {name}")))?,
        None => 0,
    };
    let prompts = if args.prompts.is_empty() {
        let mut p = model.characters().to_vec();
        p.push("random".into());
        p
    } else {
        args.prompts.clone()
    };
    let mut csv = crate::report::REPORT_HEADER.to_string() + "\n";
    for prompt in &prompts {
        let report = evaluate_prompt(&world, &model, prompt, slot, args.games, &seeds)?;
        say(out, &report.to_text())?;
        csv += &report.csv_rows();
    }
    if let Some(path) = &args.out {
        write_file(path, csv.as_bytes())?;
    }
    Ok(())
}

fn mean_curve_csv(series: &[(usize, f32, f32)], seeds: usize) -> String {
    let mut s = String::from("step,mean_score,mean_opportunity_fraction,seeds\n");
    for (step, score, opp) in series {
        s += &format!("{step},{score:.4},{opp:.4},{seeds}\n");
    }
    s
}

pub fn fewshot(args: &FewshotArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(&args.run)?;
    if let Some(b) = args.budget {
        cfg.train.step_budget = b;
    }
    cfg.validate()?;
    let world = load_world(&cfg)?;
    let core = load_core(&args.core, &world)?;
    if world.character_index(&args.character).is_none() {
        return Err(CliError::Config(format!(
            "world has no character {}",
            args.character
        )));
    }
    let before = hash_hex(core.params());
    let mode = match args.mode {
        Mode::Frozen => "frozen",
        Mode::Unfrozen => "unfrozen",
    };
    let mut manifest = manifest_head(&format!("fewshot --mode {mode}"), &cfg);
    manifest += &format!(
        "core: {}\ncharacter: {}\ncore_hash_before: {before}\n",
        args.core.display(),
        args.character
    );
    let mut series = Vec::new();
    for &seed in &cfg.seeds {
        let mut tc = cfg.train.clone();
        tc.seed = seed;
        let dir = cfg.out.join(format!("seed-{seed}"));
        let (curve, steps) = match args.mode {
            Mode::Frozen => {
                let mut attention =
                    ThespianAttention::new(&core, cfg.attention, seed).map_err(runtime)?;
                let o = train::train_fewshot(&world, &core, &mut attention, &args.character, &tc)
                    .map_err(runtime)?;
                save_entries(&dir.join("attention.thsp"), &attention.to_entries())?;
                (o.curve, o.steps)
            }
            Mode::Unfrozen => {
                let o = train::train_unfrozen_baseline(&world, &core, &args.character, &tc)
                    .map_err(runtime)?;
                save_entries(&dir.join("finetuned.thsp"), &o.model.to_entries())?;
                manifest += &format!(
                    "seed {seed}: finetuned hash {}\n",
                    hash_hex(o.model.params())
                );
                (o.curve, o.steps)
            }
        };
        write_file(&dir.join("curve.csv"), to_csv(&curve).as_bytes())?;
        let s = trailing_means(
            &curve,
            &args.character,
            MEAN_CURVE_EVERY,
            tc.step_budget,
            MEAN_CURVE_WINDOW,
        );
        let last = s.last().map_or(0.0, |p| p.1);
        say(
            out,
            &format!("seed {seed}: {steps} steps, trailing mean score {last:.2}\n"),
        )?;
        series.push(s);
    }
    let mean = mean_series(&series);
    write_file(
        &cfg.out.join("curve-mean.csv"),
        mean_curve_csv(&mean, series.len()).as_bytes(),
    )?;
    let after = hash_hex(load_core(&args.core, &world)?.params());
    let unchanged = after == before && hash_hex(core.params()) == before;
    manifest += &format!("core_hash_after: {after}\ncore_unchanged: {unchanged}\n");
    manifest += &manifest_tail(&cfg);
    write_file(&cfg.out.join("manifest.txt"), manifest.as_bytes())
}

fn top_verbs(model: &ThespianModel, tape: &mut Tape, obs: &thespian::world::Observation) -> String {
    let mut s = String::new();
    for (slot, name) in model.characters().iter().enumerate() {
        let row = model.forward(tape, obs, slot);
        let p = tape.graph.softmax(row.verbs);
        let probs = tape.graph.value(p).to_vec();
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        let top: Vec<String> = order
            .iter()
            .take(5)
            .map(|&i| format!("{} {:.2}", model.verbs()[i].verb, probs[i]))
            .collect();
        s += &format!("  [{name}] {}\n", top.join(", "));
    }
    s
}

fn summary(world: &WorldSpec, character: usize, trace: &EpisodeTrace) -> String {
    let def = &world.characters[character];
    let opp = world.opportunity_report(trace);
    let mut s = format!(
        "score {} of {} for {} in {} steps\n",
        trace.total_reward(),
        world.max_score.unwrap_or_else(|| def.max_score()),
        def.name,
        trace.len()
    );
    for (c, frac) in world.characters.iter().zip(&opp) {
        s += &format!("  {} opportunities: {:.0}%\n", c.name, frac * 100.0);
    }
    s
}

pub fn play(
    args: &PlayArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let world = WorldSource::parse(&args.world).load()?;
    let character = match &args.character {
        Some(name) => world
            .character_index(name)
            .ok_or_else(|| CliError::Config(format!("world has no character {name}")))?,
        None => 0,
    };
    let model = match &args.checkpoint {
        Some(p) => Some(load_core(p, &world)?),
        None => None,
    };
    let (mut state, mut obs) = world.reset(args.seed);
    let mut trace = EpisodeTrace::default();
    let mut tape = Tape::inference();
    say(out, &format!("{}\n{}\n", obs.look, obs.inventory_text))?;
    loop {
        if let Some(m) = &model {
            say(out, &top_verbs(m, &mut tape, &obs))?;
        }
        say(out, "> ")?;
        let mut line = String::new();
        let read = input.read_line(&mut line).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdin>"),
            source,
        })?;
        let cmd = line.trim();
        if read == 0 || cmd == "quit" {
            return say(out, &format!("\n{}", summary(&world, character, &trace)));
        }
        if cmd == "look" {
            say(out, &format!("{}\n", obs.look))?;
            continue;
        }
        let Some(action) = ActionPattern::parse(cmd) else {
            say(out, &format!("{NOTHING_HAPPENS}\n"))?;
            continue;
        };
        let step = world
            .step(&mut state, &action, character)
            .map_err(runtime)?;
        trace.steps.push(TraceStep {
            action,
            success: step.success,
            reward: step.reward,
        });
        obs = step.observation;
        let mut text = format!("{}\n", obs.feedback);
        if step.reward != 0.0 {
            text += &format!("(+{})\n", step.reward);
        }
        if step.done {
            trace.reached_exit = state.agent_room == world.exit_room;
            return say(out, &format!("{text}\n{}", summary(&world, character, &trace)));
        }
        text += &format!("{}\n{}\n", obs.look, obs.inventory_text);
        say(out, &text)?;
    }
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut all = Vec::new();
    for path in &args.inputs {
        all.extend(read_reports(path)?);
    }
    say(out, &summary_table(&all))
}
