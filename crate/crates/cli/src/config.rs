//! Run configuration: `[section]` headers followed by `key: value` lines,
//! `#` comments on their own lines.

use std::path::{Path, PathBuf};

use thespian::agent::ModelConfig;
use thespian::attention::{AttentionConfig, InfluenceRule};
use thespian::train::TrainConfig;
use thespian::world::{maps, WorldSpec};

use crate::CliError;

/// Where a world definition comes from: a file, or `builtin:<name>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorldSource {
    File(PathBuf),
    Builtin(String),
}

impl WorldSource {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("builtin:") {
            Some(name) => Self::Builtin(name.to_string()),
            None => Self::File(PathBuf::from(s)),
        }
    }

    pub fn load(&self) -> Result<WorldSpec, CliError> {
        let text = match self {
            Self::File(p) => std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::MissingFile(p.clone()),
                _ => CliError::Config(format!("cannot read {}: {e}", p.display())),
            })?,
            Self::Builtin(name) => maps::by_name(name)
                .ok_or_else(|| CliError::Config(format!("no builtin map named {name}")))?
                .to_string(),
        };
        WorldSpec::parse(&text).map_err(|e| CliError::Config(format!("{self}: {e}")))
    }
}

impl std::fmt::Display for WorldSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::File(p) => write!(f, "{}", p.display()),
            Self::Builtin(n) => write!(f, "builtin:{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub world: Option<WorldSource>,
    pub characters: Vec<String>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub attention: AttentionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: None,
            characters: Vec::new(),
            out: PathBuf::from("runs"),
            seeds: vec![0],
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            attention: AttentionConfig::default(),
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| bad(line, format!("{key}: cannot parse {v:?}")))
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>, CliError> {
    let seeds = v
        .split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Config(format!("bad seed {s:?}")))
        })
        .collect::<Result<Vec<u64>, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
            _ => CliError::Config(format!("cannot read {}: {e}", path.display())),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                if !matches!(name, "run" | "train" | "model" | "attention") {
                    return Err(bad(line, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = t.split_once(':') else {
                return Err(bad(line, "expected `key: value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(bad(line, "key outside of a section"));
            }
            cfg.set(&section, key, value, line)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str, line: usize) -> Result<(), CliError> {
        let t = &mut self.train;
        let m = &mut self.model;
        let a = &mut self.attention;
        match (section, key) {
            ("run", "world") => self.world = Some(WorldSource::parse(v)),
            ("run", "characters") => {
                self.characters = v.split_whitespace().map(str::to_string).collect()
            }
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "seeds") => self.seeds = parse_seeds(v).map_err(|e| bad(line, e))?,
            ("train", "episodes") => t.episodes = num(line, key, v)?,
            ("train", "step_budget") => t.step_budget = num(line, key, v)?,
            ("train", "discount") => t.discount = num(line, key, v)?,
            ("train", "lr_core") => t.lr_core = num(line, key, v)?,
            ("train", "lr_attention") => t.lr_attention = num(line, key, v)?,
            ("train", "value_coef") => t.value_coef = num(line, key, v)?,
            ("train", "fewshot_value_coef") => t.fewshot_value_coef = num(line, key, v)?,
            ("train", "entropy_coef") => t.entropy_coef = num(line, key, v)?,
            ("train", "clip_norm") => t.clip_norm = num(line, key, v)?,
            ("train", "eval_every") => t.eval_every = num(line, key, v)?,
            ("train", "eval_games") => t.eval_games = num(line, key, v)?,
            ("train", "games_per_character") => t.games_per_character = num(line, key, v)?,
            ("model", "embed_dim") => m.embed_dim = num(line, key, v)?,
            ("model", "hidden_dim") => m.hidden_dim = num(line, key, v)?,
            ("model", "prompt_dim") => m.prompt_dim = num(line, key, v)?,
            ("model", "state_dim") => m.state_dim = num(line, key, v)?,
            ("attention", "d_ff") => a.d_ff = num(line, key, v)?,
            ("attention", "d_att") => a.d_att = num(line, key, v)?,
            ("attention", "m") => a.smoothing = Some(num(line, key, v)?),
            ("attention", "alpha_obs") => {
                let vals: Vec<f32> = v
                    .split_whitespace()
                    .map(|x| num(line, key, x))
                    .collect::<Result<_, _>>()?;
                a.alpha_obs = vals
                    .try_into()
                    .map_err(|_| bad(line, "alpha_obs needs exactly 4 values"))?;
            }
            ("attention", "influence") => {
                a.influence = match v {
                    "value" => InfluenceRule::FrozenValue,
                    "mass" => InfluenceRule::AttentionMass,
                    _ => return Err(bad(line, "influence must be `value` or `mass`")),
                }
            }
            _ => return Err(bad(line, format!("unknown key {key} in [{section}]"))),
        }
        Ok(())
    }

    /// Checks cross-field invariants after flags have been applied.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        self.train.validate().map_err(CliError::Config)?;
        self.attention
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let m = &self.model;
        if [m.embed_dim, m.hidden_dim, m.prompt_dim, m.state_dim].contains(&0) {
            return Err(CliError::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    /// The configuration in its own file format, for manifests.
    pub fn render(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let a = &self.attention;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let alpha: Vec<String> = a.alpha_obs.iter().map(f32::to_string).collect();
        let mut out = String::from("[run]\n");
        if let Some(w) = &self.world {
            out += &format!("world: {w}\n");
        }
        if !self.characters.is_empty() {
            out += &format!("characters: {}\n", self.characters.join(" "));
        }
        out += &format!("out: {}\nseeds: {}\n", self.out.display(), seeds.join(" "));
        out += &format!(
            "\n[train]\nepisodes: {}\nstep_budget: {}\ndiscount: {}\nlr_core: {}\nlr_attention: {}\n\
             value_coef: {}\nfewshot_value_coef: {}\nentropy_coef: {}\nclip_norm: {}\n\
             eval_every: {}\neval_games: {}\ngames_per_character: {}\n",
            t.episodes,
            t.step_budget,
            t.discount,
            t.lr_core,
            t.lr_attention,
            t.value_coef,
            t.fewshot_value_coef,
            t.entropy_coef,
            t.clip_norm,
            t.eval_every,
            t.eval_games,
            t.games_per_character
        );
        out += &format!(
            "\n[model]\nembed_dim: {}\nhidden_dim: {}\nprompt_dim: {}\nstate_dim: {}\n",
            m.embed_dim, m.hidden_dim, m.prompt_dim, m.state_dim
        );
        out += &format!(
            "\n[attention]\nd_ff: {}\nd_att: {}\nm: {}\nalpha_obs: {}\ninfluence: {}\n",
            a.d_ff,
            a.d_att,
            a.m(),
            alpha.join(" "),
            match a.influence {
                InfluenceRule::FrozenValue => "value",
                InfluenceRule::AttentionMass => "mass",
            }
        );
        out
    }
}
