//! Few-shot character blending over a frozen core: per-component attention
//! across the characters' logit rows, a new-character prompt, and a value
//! rule that leans on the most influential pre-trained character.

use rand::Rng;

use crate::agent::{sample_action, Decision, Policy, Tape, ThespianModel};
use crate::grad::checkpoint::{self, CheckpointError, Entries};
use crate::grad::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng;
use crate::world::Observation;

#[derive(Debug, thiserror::Error)]
pub enum AttentionError {
    #[error("blending needs at least 2 pre-trained characters, core has {0}")]
    TooFewCharacters(usize),
    #[error("smoothing constant must be positive, got {0}")]
    BadSmoothing(f32),
    #[error("observation scaling coefficients must be positive, got {0:?}")]
    BadAlpha([f32; 4]),
    #[error("attention checkpoint does not fit the core: {0}")]
    Shape(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Which pre-trained character anchors the value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InfluenceRule {
    /// Highest frozen critic value.
    #[default]
    FrozenValue,
    /// Largest total attention score.
    AttentionMass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub d_ff: usize,
    pub d_att: usize,
    /// Score smoothing; `None` means `sqrt(d_att)`.
    pub smoothing: Option<f32>,
    pub alpha_obs: [f32; 4],
    pub influence: InfluenceRule,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            d_ff: 128,
            d_att: 64,
            smoothing: None,
            alpha_obs: [0.25; 4],
            influence: InfluenceRule::FrozenValue,
        }
    }
}

impl AttentionConfig {
    pub fn m(&self) -> f32 {
        self.smoothing.unwrap_or((self.d_att as f32).sqrt())
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let m = self.m();
        if !(m > 0.0 && m.is_finite()) {
            return Err(AttentionError::BadSmoothing(m));
        }
        if self.alpha_obs.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(AttentionError::BadAlpha(self.alpha_obs));
        }
        Ok(())
    }
}

/// The frozen core's view of one observation, one row per character.
#[derive(Debug, Clone, Copy)]
pub struct Stack {
    /// `[4, H]`
    pub obs: Var,
    /// `[n, |V|]`
    pub verbs: Var,
    /// `[n, |O|]`
    pub objects: Var,
    /// `[n]`
    pub values: Var,
}

/// Runs the core once per character with that character's own prompt and
/// keeps row i of pass i.
pub fn collect_stack(
    core: &ThespianModel,
    tape: &mut Tape,
    obs: &Observation,
) -> Result<Stack, AttentionError> {
    let n = core.num_characters();
    if n < 2 {
        return Err(AttentionError::TooFewCharacters(n));
    }
    let enc = core.encode(tape, obs);
    let rows: Vec<_> = (0..n)
        .map(|i| {
            let p = core.prompt_var(tape, i);
            let s = core.condition(tape, &enc, i, p);
            core.head_row(tape, s, i)
        })
        .collect();
    let g = &mut tape.graph;
    Ok(Stack {
        obs: enc.rows,
        verbs: g.stack_rows(&rows.iter().map(|r| r.verbs).collect::<Vec<_>>()),
        objects: g.stack_rows(&rows.iter().map(|r| r.objects).collect::<Vec<_>>()),
        values: g.concat(&rows.iter().map(|r| r.value).collect::<Vec<_>>()),
    })
}

/// Weights of one feed-forward branch, stored `[in, out]` so rows of the
/// input can be multiplied directly.
#[derive(Debug, Clone, Copy)]
struct Branch {
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
}

impl Branch {
    fn add<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        cfg: &AttentionConfig,
        rng: &mut R,
    ) -> Self {
        let (f, a) = (cfg.d_ff, cfg.d_att);
        Self {
            ff1_w: ps.add(
                format!("attn/{name}/ff1/w"),
                Tensor::uniform_fan_in(&[input, f], input, rng),
            ),
            ff1_b: ps.add(
                format!("attn/{name}/ff1/b"),
                Tensor::uniform_fan_in(&[f], input, rng),
            ),
            ff2_w: ps.add(
                format!("attn/{name}/ff2/w"),
                Tensor::uniform_fan_in(&[f, a], f, rng),
            ),
            ff2_b: ps.add(format!("attn/{name}/ff2/b"), Tensor::uniform_fan_in(&[a], f, rng)),
            ln_gain: ps.add(format!("attn/{name}/ln/gain"), Tensor::new(&[a], vec![1.0; a])),
            ln_bias: ps.add(format!("attn/{name}/ln/bias"), Tensor::zeros(&[a])),
        }
    }

    /// `LN(relu(X W1 + b1) W2 + b2)` applied to every row of `x`.
    fn apply(&self, g: &mut Graph, ps: &ParamSet, x: Var) -> Var {
        let [w1, b1, w2, b2, gain, bias] = [
            self.ff1_w,
            self.ff1_b,
            self.ff2_w,
            self.ff2_b,
            self.ln_gain,
            self.ln_bias,
        ]
        .map(|id| g.param(ps, id));
        let h = g.matmul(x, w1);
        let h = g.add_bias(h, b1);
        let h = g.relu(h);
        let h = g.matmul(h, w2);
        let h = g.add_bias(h, b2);
        g.layer_norm(h, gain, bias)
    }
}

/// Scores and blended distribution for one action type.
#[derive(Debug, Clone, Copy)]
pub struct Blend {
    /// `[4, n]`, each row a distribution over characters.
    pub scores: Var,
    /// Log of the blended distribution.
    pub log_p: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub verb: Blend,
    pub object: Blend,
    /// `[4, d_att]`
    pub h_obs: Var,
    pub value: Var,
    pub influential: usize,
}

/// Trainable attention parameters plus the new character's prompt.
#[derive(Debug, Clone)]
pub struct ThespianAttention {
    config: AttentionConfig,
    params: ParamSet,
    obs: Branch,
    verb: Branch,
    object: Branch,
    prompt: ParamId,
    prompt_proj: ParamId,
    value_w: ParamId,
    value_b: ParamId,
}

impl ThespianAttention {
    /// Fresh parameters sized for `core`.
    pub fn new(
        core: &ThespianModel,
        config: AttentionConfig,
        seed: u64,
    ) -> Result<Self, AttentionError> {
        config.validate()?;
        let n = core.num_characters();
        if n < 2 {
            return Err(AttentionError::TooFewCharacters(n));
        }
        let mut rng = rng::derive(seed, 0xa7);
        let mc = core.config();
        let (h, p) = (mc.hidden_dim, mc.prompt_dim);
        let mut ps = ParamSet::new();
        let obs = Branch::add(&mut ps, "obs", h, &config, &mut rng);
        let verb = Branch::add(&mut ps, "verb", core.verbs().len(), &config, &mut rng);
        let object = Branch::add(&mut ps, "object", core.objects().len(), &config, &mut rng);
        let prompt = ps.add(
            "prompt/new",
            Tensor::normal(&[p], crate::agent::PROMPT_STD, &mut rng),
        );
        let prompt_proj = ps.add("attn/prompt/w", Tensor::uniform_fan_in(&[p, h], p, &mut rng));
        let value_w = ps.add(
            "attn/value/w",
            Tensor::uniform_fan_in(&[1, config.d_att], config.d_att, &mut rng),
        );
        let value_b = ps.add("attn/value/b", Tensor::uniform_fan_in(&[1], config.d_att, &mut rng));
        Ok(Self {
            config,
            params: ps,
            obs,
            verb,
            object,
            prompt,
            prompt_proj,
            value_w,
            value_b,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    /// Changes `m`, `alpha_obs` or the influence rule without touching weights.
    pub fn set_config(&mut self, config: AttentionConfig) -> Result<(), AttentionError> {
        config.validate()?;
        if (config.d_ff, config.d_att) != (self.config.d_ff, self.config.d_att) {
            return Err(AttentionError::Shape("layer sizes are fixed".into()));
        }
        self.config = config;
        Ok(())
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `O` with the projected new prompt added to every row, then the
    /// observation branch.
    pub fn encode_obs(&self, g: &mut Graph, obs: Var) -> Var {
        let p = g.param(&self.params, self.prompt);
        let w = g.param(&self.params, self.prompt_proj);
        let bias = g.matmul(p, w);
        let o = g.add_bias(obs, bias);
        self.obs.apply(g, &self.params, o)
    }

    /// Scores `h_O h_Aᵀ / m` softmaxed over characters, then the
    /// alpha-weighted blend of the raw logit rows.
    pub fn attend(&self, g: &mut Graph, h_obs: Var, logits: Var, verbs: bool) -> Blend {
        let branch = if verbs { &self.verb } else { &self.object };
        let h_a = branch.apply(g, &self.params, logits);
        blend(g, h_obs, h_a, logits, self.config.m(), &self.config.alpha_obs)
    }

    /// Averages a trainable value read from mean-pooled `h_O` with the frozen
    /// value of the most influential character.
    pub fn fewshot_value(
        &self,
        g: &mut Graph,
        frozen: Var,
        h_obs: Var,
        scores: &[Var],
    ) -> (Var, usize) {
        let j = match self.config.influence {
            InfluenceRule::FrozenValue => argmax(g.value(frozen)),
            InfluenceRule::AttentionMass => {
                let n = g.value(frozen).len();
                let mut mass = vec![0.0; n];
                for &s in scores {
                    for (k, v) in g.value(s).iter().enumerate() {
                        mass[k % n] += v;
                    }
                }
                argmax(&mass)
            }
        };
        let pooled = g.mean_rows(h_obs);
        let w = g.param(&self.params, self.value_w);
        let b = g.param(&self.params, self.value_b);
        let v_new = g.dense(pooled, w, Some(b));
        let v_new = g.pick(v_new, 0);
        (blend_value(g, v_new, frozen, j), j)
    }

    pub fn forward(&self, tape: &mut Tape, stack: &Stack) -> AttentionOutput {
        let g = &mut tape.graph;
        let h_obs = self.encode_obs(g, stack.obs);
        let verb = self.attend(g, h_obs, stack.verbs, true);
        let object = self.attend(g, h_obs, stack.objects, false);
        let (value, influential) =
            self.fewshot_value(g, stack.values, h_obs, &[verb.scores, object.scores]);
        AttentionOutput {
            verb,
            object,
            h_obs,
            value,
            influential,
        }
    }

    pub fn to_entries(&self) -> Entries {
        checkpoint::entries_of(&self.params)
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Loads stored weights into a module sized for `core`.
    pub fn from_entries(
        core: &ThespianModel,
        config: AttentionConfig,
        entries: &Entries,
    ) -> Result<Self, AttentionError> {
        let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let (Some(ff1), Some(ff2)) = (find("attn/obs/ff1/w"), find("attn/obs/ff2/w")) else {
            return Err(AttentionError::Shape("missing observation branch".into()));
        };
        let config = AttentionConfig {
            d_ff: ff1.shape()[1],
            d_att: ff2.shape()[1],
            ..config
        };
        let mut attn = Self::new(core, config, 0)?;
        checkpoint::load_into(&mut attn.params, entries)?;
        Ok(attn)
    }
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `S = softmax_rows(h_O h_Aᵀ / m)`, `w = alpha S`, `log softmax(w A)`.
pub fn blend(g: &mut Graph, h_obs: Var, h_act: Var, logits: Var, m: f32, alpha: &[f32; 4]) -> Blend {
    let t = g.transpose(h_act);
    let raw = g.matmul(h_obs, t);
    let raw = g.mul_scalar(raw, 1.0 / m);
    let scores = g.softmax(raw);
    let a = g.constant(&Tensor::vector(alpha));
    let w = g.matmul(a, scores);
    let mixed = g.matmul(w, logits);
    let log_p = g.log_softmax(mixed);
    Blend { scores, log_p }
}

/// `(v_new + frozen[j]) / 2`; the frozen term carries no gradient.
pub fn blend_value(g: &mut Graph, v_new: Var, frozen: Var, j: usize) -> Var {
    let anchor = g.value(frozen)[j];
    let anchor = g.scalar(anchor);
    let sum = g.add(v_new, anchor);
    g.mul_scalar(sum, 0.5)
}

/// A frozen core steered by the attention module.
#[derive(Debug, Clone, Copy)]
pub struct FewShotPolicy<'a> {
    pub core: &'a ThespianModel,
    pub attention: &'a ThespianAttention,
}

impl FewShotPolicy<'_> {
    pub fn output(&self, tape: &mut Tape, obs: &Observation) -> AttentionOutput {
        let stack = collect_stack(self.core, tape, obs).expect("core checked at construction");
        self.attention.forward(tape, &stack)
    }
}

/// Samples verb and object independently from the blended distributions.
pub fn act_fewshot<R: Rng + ?Sized>(
    core: &ThespianModel,
    tape: &mut Tape,
    out: &AttentionOutput,
    rng: &mut R,
) -> Decision {
    sample_action(
        tape,
        core.verbs(),
        core.objects(),
        out.verb.log_p,
        out.object.log_p,
        out.value,
        rng,
    )
}

impl Policy for FewShotPolicy<'_> {
    fn decide(&self, tape: &mut Tape, obs: &Observation, rng: &mut dyn rand::RngCore) -> Decision {
        let out = self.output(tape, obs);
        act_fewshot(self.core, tape, &out, rng)
    }
}

#[cfg(test)]
mod tests;
