use proptest::prelude::*;

use super::*;
use crate::agent::ModelConfig;
use crate::world::{maps, WorldSpec};

fn world() -> WorldSpec {
    WorldSpec::parse(maps::ADVENTURER_FIRST).unwrap()
}

fn small_core(w: &WorldSpec) -> ThespianModel {
    let cfg = ModelConfig {
        embed_dim: 8,
        hidden_dim: 12,
        prompt_dim: 6,
        state_dim: 16,
    };
    let mut core = ThespianModel::new(w, &["thief", "adventurer"], cfg, 3);
    core.params_mut().set_all_requires_grad(false);
    core
}

fn small_attn(core: &ThespianModel) -> ThespianAttention {
    let cfg = AttentionConfig {
        d_ff: 10,
        d_att: 8,
        ..Default::default()
    };
    ThespianAttention::new(core, cfg, 5).unwrap()
}

fn mat(g: &mut Graph, rows: &[&[f32]]) -> Var {
    let flat: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    g.constant(&Tensor::matrix(rows.len(), rows[0].len(), &flat))
}

fn probs(g: &Graph, log_p: Var) -> Vec<f32> {
    g.value(log_p).iter().map(|l| l.exp()).collect()
}

#[test]
fn two_component_toy_by_hand() {
    let mut g = Graph::inference();
    let o = mat(&mut g, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]);
    let ha = mat(&mut g, &[&[1.0, 0.0], &[0.0, 2.0]]);
    let a = mat(&mut g, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 2.0]]);
    let b = blend(&mut g, o, ha, a, 1.0, &[0.25; 4]);
    let s_expect = [
        0.731_058_6,
        0.268_941_4,
        0.119_202_9,
        0.880_797_1,
        0.268_941_4,
        0.731_058_6,
        0.5,
        0.5,
    ];
    for (x, y) in g.value(b.scores).iter().zip(s_expect) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
    let p_expect = [0.227_094_7, 0.274_723_6, 0.498_181_7];
    for (x, y) in probs(&g, b.log_p).iter().zip(p_expect) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn huge_smoothing_gives_uniform_scores() {
    let mut g = Graph::inference();
    let o = mat(&mut g, &[&[1.0, -2.0], &[0.5, 1.0], &[3.0, 1.0], &[0.0, 2.0]]);
    let ha = mat(&mut g, &[&[1.0, 0.0], &[0.0, 2.0], &[-1.0, 1.0]]);
    let a = mat(&mut g, &[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]);
    let b = blend(&mut g, o, ha, a, 1e6, &[0.25; 4]);
    for s in g.value(b.scores) {
        assert!((s - 1.0 / 3.0).abs() < 1e-5);
    }
}

#[test]
fn concentrated_scores_reproduce_one_row() {
    let mut g = Graph::inference();
    // Every component prefers character 1 by a margin of 100.
    let o = mat(&mut g, &[&[1.0], &[1.0], &[1.0], &[1.0]]);
    let ha = mat(&mut g, &[&[0.0], &[100.0]]);
    let a = mat(&mut g, &[&[5.0, 0.0, 0.0], &[0.3, -1.0, 2.0]]);
    let b = blend(&mut g, o, ha, a, 1.0, &[0.1, 0.2, 0.3, 0.4]);
    let row = [0.3f32, -1.0, 2.0];
    let z: f32 = row.iter().map(|x| x.exp()).sum();
    for (p, x) in probs(&g, b.log_p).iter().zip(row) {
        assert!((p - x.exp() / z).abs() < 1e-6);
    }
}

fn entropy(p: &[f32]) -> f32 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f32>()
}

#[test]
fn blending_probabilities_is_flatter_than_blending_logits() {
    let rows: [&[f32]; 2] = [&[4.0, 0.0, -2.0, 1.0], &[-1.0, 3.0, 0.0, 0.5]];
    let mut g = Graph::inference();
    let o = mat(&mut g, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[0.5, 0.0]]);
    let ha = mat(&mut g, &[&[1.0, 0.0], &[0.0, 1.0]]);
    let logits = mat(&mut g, &rows);
    let softened = g.softmax(logits);
    let raw = blend(&mut g, o, ha, logits, 1.0, &[0.25; 4]);
    let soft = blend(&mut g, o, ha, softened, 1.0, &[0.25; 4]);
    assert!(entropy(&probs(&g, soft.log_p)) > entropy(&probs(&g, raw.log_p)));
}

#[test]
fn scaling_alpha_keeps_the_argmax() {
    let mut g = Graph::inference();
    let o = mat(&mut g, &[&[1.0, 0.2], &[0.0, 1.0], &[1.0, 1.0], &[0.3, 0.0]]);
    let ha = mat(&mut g, &[&[1.0, -1.0], &[0.5, 2.0]]);
    let a = mat(&mut g, &[&[1.0, 0.0, 3.0], &[2.0, 1.0, 0.0]]);
    let am = |g: &Graph, v: Var| argmax(g.value(v));
    let base = blend(&mut g, o, ha, a, 2.0, &[0.25; 4]);
    let hot = blend(&mut g, o, ha, a, 2.0, &[3.0; 4]);
    assert_eq!(am(&g, base.log_p), am(&g, hot.log_p));
    assert!(g.value(hot.log_p).iter().cloned().fold(f32::MIN, f32::max)
        > g.value(base.log_p).iter().cloned().fold(f32::MIN, f32::max));
}

#[test]
fn value_rule_arithmetic() {
    let mut g = Graph::inference();
    let frozen = g.constant(&Tensor::vector(&[3.0, 7.0]));
    assert_eq!(argmax(g.value(frozen)), 1);
    let v_new = g.scalar(1.0);
    let b = blend_value(&mut g, v_new, frozen, 1);
    assert_eq!(g.scalar_value(b), 4.0);
    let same = g.scalar(7.0);
    let b = blend_value(&mut g, same, frozen, 1);
    assert_eq!(g.scalar_value(b), 7.0);
}

#[test]
fn stack_rows_match_standalone_passes() {
    let w = world();
    let core = small_core(&w);
    let obs = w.reset(0).1;
    let before = core.params().content_hash();
    let mut tape = Tape::inference();
    let st = collect_stack(&core, &mut tape, &obs).unwrap();
    assert_eq!(tape.graph.shape(st.verbs), [2, w.verbs.len()]);
    assert_eq!(tape.graph.shape(st.obs), [4, 12]);
    for i in 0..2 {
        let mut solo = Tape::inference();
        let row = core.forward(&mut solo, &obs, i);
        assert_eq!(tape.graph.tensor(st.verbs).row(i), solo.graph.value(row.verbs));
        assert_eq!(tape.graph.tensor(st.objects).row(i), solo.graph.value(row.objects));
        assert_eq!(tape.graph.value(st.values)[i], solo.graph.value(row.value)[0]);
    }
    assert_eq!(core.params().content_hash(), before);
}

#[test]
fn one_character_core_is_rejected() {
    let w = world();
    let core = ThespianModel::new(&w, &["thief"], ModelConfig::default(), 0);
    let mut tape = Tape::inference();
    assert!(matches!(
        collect_stack(&core, &mut tape, &w.reset(0).1),
        Err(AttentionError::TooFewCharacters(1))
    ));
    assert!(ThespianAttention::new(&core, AttentionConfig::default(), 0).is_err());
}

#[test]
fn bad_config_is_rejected() {
    let w = world();
    let core = small_core(&w);
    let bad_m = AttentionConfig {
        smoothing: Some(0.0),
        ..Default::default()
    };
    assert!(matches!(
        ThespianAttention::new(&core, bad_m, 0),
        Err(AttentionError::BadSmoothing(_))
    ));
    let bad_alpha = AttentionConfig {
        alpha_obs: [0.25, 0.25, 0.0, 0.25],
        ..Default::default()
    };
    assert!(matches!(
        ThespianAttention::new(&core, bad_alpha, 0),
        Err(AttentionError::BadAlpha(_))
    ));
}

#[test]
fn gradients_reach_only_the_attention_module() {
    let w = world();
    let core = small_core(&w);
    let attn = small_attn(&core);
    let mut tape = Tape::recording();
    let st = collect_stack(&core, &mut tape, &w.reset(0).1).unwrap();
    let out = attn.forward(&mut tape, &st);
    let g = &mut tape.graph;
    let a = g.pick(out.verb.log_p, 3);
    let b = g.pick(out.object.log_p, 5);
    let loss = g.add_n(&[a, b, out.value]);
    let grads = tape.graph.backward(loss).unwrap();
    for (id, _) in core.params().iter() {
        assert!(grads.get(core.params(), id).is_none());
    }
    for (id, p) in attn.params().iter() {
        let gr = grads.get(attn.params(), id).expect("attention gradient");
        // a bias on the keys shifts a whole score row, which softmax ignores
        if p.name.ends_with("verb/ln/bias") || p.name.ends_with("object/ln/bias") {
            assert!(gr.iter().all(|x| x.abs() < 1e-6), "{} moves the scores", p.name);
        } else {
            assert!(gr.iter().any(|&x| x != 0.0), "{} has zero gradient", p.name);
        }
    }
}

#[test]
fn one_hot_and_uniform_sampling() {
    let w = world();
    let core = small_core(&w);
    let nv = core.verbs().len();
    let no = core.objects().len();
    let mut rng = rng::seeded(3);
    let mut counts = vec![0usize; nv];
    let draws = 10_000;
    for _ in 0..draws {
        let mut tape = Tape::inference();
        let g = &mut tape.graph;
        let mut hot = vec![-1e9f32; no];
        hot[4] = 0.0;
        let out = AttentionOutput {
            verb: Blend {
                scores: g.scalar(0.0),
                log_p: g.constant(&Tensor::vector(&vec![-(nv as f32).ln(); nv])),
            },
            object: Blend {
                scores: g.scalar(0.0),
                log_p: g.constant(&Tensor::vector(&hot)),
            },
            h_obs: g.scalar(0.0),
            value: g.scalar(0.0),
            influential: 0,
        };
        let d = act_fewshot(&core, &mut tape, &out, &mut rng);
        assert_eq!(d.object, 4);
        counts[d.verb] += 1;
    }
    for c in counts {
        assert!((c as f32 / draws as f32 - 1.0 / nv as f32).abs() < 0.02);
    }
}

#[test]
fn fewshot_policy_is_seeded() {
    let w = world();
    let core = small_core(&w);
    let attn = small_attn(&core);
    let policy = FewShotPolicy {
        core: &core,
        attention: &attn,
    };
    let run = || {
        let mut r = rng::seeded(12);
        let (mut state, mut obs) = w.reset(0);
        let mut acts = Vec::new();
        for _ in 0..10 {
            let mut tape = Tape::inference();
            let d = policy.decide(&mut tape, &obs, &mut r);
            obs = w.step(&mut state, &d.action, 2).unwrap().observation;
            acts.push(d.action);
        }
        acts
    };
    assert_eq!(run(), run());
}

#[test]
fn attention_mass_rule_picks_the_most_attended_character() {
    let w = world();
    let core = small_core(&w);
    let mut attn = small_attn(&core);
    let cfg = AttentionConfig {
        influence: InfluenceRule::AttentionMass,
        ..*attn.config()
    };
    attn.set_config(cfg).unwrap();
    let mut g = Graph::inference();
    let frozen = g.constant(&Tensor::vector(&[9.0, 1.0]));
    let h = g.constant(&Tensor::zeros(&[4, 8]));
    let s = mat(&mut g, &[&[0.2, 0.8], &[0.3, 0.7], &[0.6, 0.4], &[0.1, 0.9]]);
    let (_, j) = attn.fewshot_value(&mut g, frozen, h, &[s]);
    assert_eq!(j, 1);
    attn.set_config(AttentionConfig {
        influence: InfluenceRule::FrozenValue,
        ..cfg
    })
    .unwrap();
    let (_, j) = attn.fewshot_value(&mut g, frozen, h, &[s]);
    assert_eq!(j, 0);
}

#[test]
fn entries_round_trip() {
    let w = world();
    let core = small_core(&w);
    let attn = small_attn(&core);
    let back = ThespianAttention::from_entries(&core, AttentionConfig::default(), &attn.to_entries())
        .unwrap();
    assert_eq!(back.params().content_hash(), attn.params().content_hash());
    assert_eq!(back.config().d_att, 8);
    assert!(attn.params().find("prompt/new").is_some());
}

proptest! {
    #[test]
    fn scores_and_blends_normalize(
        vals in prop::collection::vec(-5.0f32..5.0, 4 * 3 + 3 * 3 + 3 * 5),
        m in 0.1f32..20.0,
    ) {
        let mut g = Graph::inference();
        let o = g.constant(&Tensor::matrix(4, 3, &vals[..12]));
        let ha = g.constant(&Tensor::matrix(3, 3, &vals[12..21]));
        let a = g.constant(&Tensor::matrix(3, 5, &vals[21..]));
        let b = blend(&mut g, o, ha, a, m, &[0.25; 4]);
        let s = g.tensor(b.scores);
        for r in 0..4 {
            let sum: f32 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(s.row(r).iter().all(|&x| x >= 0.0));
        }
        let p: f32 = probs(&g, b.log_p).iter().sum();
        prop_assert!((p - 1.0).abs() < 1e-6);
    }
}
