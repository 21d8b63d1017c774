//! World definitions: the declarative map format and its validated form.
//!
//! The grammar is documented in `docs/world-format.md`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

/// Verbs the engine knows how to execute. A world may declare a subset.
pub const KNOWN_VERBS: [&str; 10] = [
    "go", "take", "drop", "wear", "open", "steal", "kill", "donate", "look", "wait",
];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid world: {0}")]
    Invalid(String),
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T, WorldError> {
    Err(WorldError::Parse {
        line,
        message: message.into(),
    })
}

fn invalid<T>(message: impl Into<String>) -> Result<T, WorldError> {
    Err(WorldError::Invalid(message.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomDef {
    pub id: String,
    pub name: String,
    pub description: String,
    /// direction -> room index, in declaration order.
    pub exits: Vec<(String, usize)>,
}

impl RoomDef {
    pub fn exit(&self, direction: &str) -> Option<usize> {
        self.exits
            .iter()
            .find(|(d, _)| d == direction)
            .map(|(_, r)| *r)
    }
}

/// Where an object starts an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Room(usize),
    Npc(usize),
    /// Inside a container object.
    Inside(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDef {
    pub id: String,
    pub name: String,
    pub location: Location,
    pub portable: bool,
    pub wearable: bool,
    pub container: bool,
    /// Initial state for containers.
    pub closed: bool,
    /// Owned objects lying in a room can be stolen but not taken.
    pub owned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpcDef {
    pub id: String,
    pub name: String,
    pub location: usize,
    pub description: String,
}

/// A verb with an optional object name, e.g. `steal coins` or `wait`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionPattern {
    pub verb: String,
    pub object: Option<String>,
}

impl ActionPattern {
    pub fn new(verb: &str, object: Option<&str>) -> Self {
        Self {
            verb: verb.to_string(),
            object: object.map(str::to_string),
        }
    }

    /// Parses `verb` or `verb object`.
    pub fn parse(text: &str) -> Option<Self> {
        let mut words = text.split_whitespace();
        let verb = words.next()?.to_lowercase();
        let object = words.next().map(str::to_lowercase);
        if words.next().is_some() {
            return None;
        }
        Some(Self { verb, object })
    }
}

impl fmt::Display for ActionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.object {
            Some(o) => write!(f, "{} {}", self.verb, o),
            None => write!(f, "{}", self.verb),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardedAction {
    pub pattern: ActionPattern,
    pub reward: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterDef {
    pub name: String,
    pub rewarded_actions: Vec<RewardedAction>,
    pub exit_reward: f32,
}

impl CharacterDef {
    /// Highest score reachable in one episode.
    pub fn max_score(&self) -> f32 {
        self.rewarded_actions.iter().map(|r| r.reward).sum::<f32>() + self.exit_reward
    }

    pub fn reward_for(&self, pattern: &ActionPattern) -> Option<f32> {
        self.rewarded_actions
            .iter()
            .find(|r| &r.pattern == pattern)
            .map(|r| r.reward)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionTemplate {
    pub verb: String,
    pub arity: u8,
    pub surface_form: String,
}

impl ActionTemplate {
    pub fn for_verb(verb: &str) -> Self {
        let arity = if matches!(verb, "look" | "wait") { 0 } else { 1 };
        let surface_form = if arity == 0 {
            verb.to_string()
        } else {
            format!("{verb} {{object}}")
        };
        Self {
            verb: verb.to_string(),
            arity,
            surface_form,
        }
    }

    /// Fills the template. Arity-0 verbs ignore the object.
    pub fn fill(&self, object: &str) -> ActionPattern {
        if self.arity == 0 {
            ActionPattern::new(&self.verb, None)
        } else {
            ActionPattern::new(&self.verb, Some(object))
        }
    }
}

/// An action that only succeeds while `needs` is carried.
#[derive(Debug, Clone, PartialEq)]
pub struct Precondition {
    pub pattern: ActionPattern,
    pub needs: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub name: String,
    pub verbs: Vec<ActionTemplate>,
    pub rooms: Vec<RoomDef>,
    pub objects: Vec<ObjectDef>,
    pub npcs: Vec<NpcDef>,
    pub characters: Vec<CharacterDef>,
    pub preconditions: Vec<Precondition>,
    pub start_room: usize,
    pub exit_room: usize,
    pub step_cap: u32,
    pub max_score: Option<f32>,
}

impl WorldSpec {
    /// Parses and validates a world definition.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let blocks = read_blocks(text)?;
        build(blocks)
    }

    pub fn character_index(&self, name: &str) -> Option<usize> {
        self.characters.iter().position(|c| c.name == name)
    }

    /// Direction names used by any exit, sorted.
    pub fn directions(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .rooms
            .iter()
            .flat_map(|r| r.exits.iter().map(|(d, _)| d.as_str()))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Everything the object head can name: directions, then objects,
    /// then npcs, each in declaration order.
    pub fn object_vocabulary(&self) -> Vec<String> {
        let mut out = self.directions();
        out.extend(self.objects.iter().map(|o| o.name.clone()));
        out.extend(self.npcs.iter().map(|n| n.name.clone()));
        out
    }

    pub fn verb_names(&self) -> Vec<String> {
        self.verbs.iter().map(|v| v.verb.clone()).collect()
    }

    pub fn object_by_name(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn npc_by_name(&self, name: &str) -> Option<usize> {
        self.npcs.iter().position(|n| n.name == name)
    }

    /// Length of the shortest start-to-exit walk, in moves.
    pub fn shortest_exit_path(&self) -> Vec<(usize, String)> {
        bfs_path(&self.rooms, self.start_room, self.exit_room).unwrap_or_default()
    }
}

/// Returns the (room-left, direction) moves of a shortest path.
fn bfs_path(rooms: &[RoomDef], from: usize, to: usize) -> Option<Vec<(usize, String)>> {
    let mut prev: Vec<Option<(usize, String)>> = vec![None; rooms.len()];
    let mut seen = vec![false; rooms.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(r) = queue.pop_front() {
        if r == to {
            let mut path = Vec::new();
            let mut cur = to;
            while let Some((p, d)) = prev[cur].clone() {
                path.push((p, d));
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for (d, next) in &rooms[r].exits {
            if !seen[*next] {
                seen[*next] = true;
                prev[*next] = Some((r, d.clone()));
                queue.push_back(*next);
            }
        }
    }
    None
}

#[derive(Debug)]
struct Block {
    kind: String,
    line: usize,
    entries: Vec<(usize, String, String)>,
}

impl Block {
    fn single(&self, key: &str) -> Result<Option<(usize, &str)>, WorldError> {
        let mut found = None;
        for (line, k, v) in &self.entries {
            if k == key {
                if found.is_some() {
                    return parse_err(*line, format!("duplicate key '{key}' in [{}]", self.kind));
                }
                found = Some((*line, v.as_str()));
            }
        }
        Ok(found)
    }

    fn required(&self, key: &str) -> Result<(usize, &str), WorldError> {
        self.single(key)?.map_or_else(
            || parse_err(self.line, format!("[{}] is missing '{key}'", self.kind)),
            Ok,
        )
    }

    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = (usize, &'a str)> + 'a {
        self.entries
            .iter()
            .filter(move |(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.as_str()))
    }

    fn flag(&self, key: &str) -> Result<bool, WorldError> {
        match self.single(key)? {
            None => Ok(false),
            Some((_, "true")) => Ok(true),
            Some((_, "false")) => Ok(false),
            Some((line, other)) => parse_err(line, format!("expected true or false, got '{other}'")),
        }
    }
}

const SECTIONS: [&str; 5] = ["meta", "room", "object", "npc", "character"];

fn allowed_keys(kind: &str) -> &'static [&'static str] {
    match kind {
        "meta" => &["name", "start", "exit", "step_cap", "verbs", "max_score", "requires"],
        "room" => &["id", "name", "description", "exit"],
        "object" => &[
            "id", "name", "location", "portable", "wearable", "container", "closed", "owned",
        ],
        "npc" => &["id", "name", "location", "description"],
        "character" => &["name", "reward", "exit_reward"],
        _ => &[],
    }
}

fn read_blocks(text: &str) -> Result<Vec<Block>, WorldError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(kind) = rest.strip_suffix(']') else {
                return parse_err(line_no, "unterminated section header");
            };
            let kind = kind.trim();
            if !SECTIONS.contains(&kind) {
                return parse_err(line_no, format!("unknown section [{kind}]"));
            }
            blocks.push(Block {
                kind: kind.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return parse_err(line_no, "expected 'key: value'");
        };
        let Some(block) = blocks.last_mut() else {
            return parse_err(line_no, "entry outside of any section");
        };
        let key = key.trim();
        if !allowed_keys(&block.kind).contains(&key) {
            return parse_err(line_no, format!("unknown key '{key}' in [{}]", block.kind));
        }
        block
            .entries
            .push((line_no, key.to_string(), value.trim().to_string()));
    }
    if blocks.is_empty() {
        return parse_err(1, "empty world definition");
    }
    Ok(blocks)
}

fn single_token(line: usize, what: &str, value: &str) -> Result<String, WorldError> {
    let v = value.trim();
    if v.is_empty() || v.contains(char::is_whitespace) {
        return parse_err(line, format!("{what} must be a single word, got '{value}'"));
    }
    Ok(v.to_lowercase())
}

fn parse_number(line: usize, value: &str) -> Result<f32, WorldError> {
    match value.trim().parse::<f32>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => parse_err(line, format!("expected a number, got '{value}'")),
    }
}

fn parse_pattern(line: usize, text: &str) -> Result<ActionPattern, WorldError> {
    ActionPattern::parse(text).map_or_else(
        || parse_err(line, format!("expected '<verb> <object?>', got '{text}'")),
        Ok,
    )
}

fn build(blocks: Vec<Block>) -> Result<WorldSpec, WorldError> {
    let metas: Vec<&Block> = blocks.iter().filter(|b| b.kind == "meta").collect();
    let meta = match metas.as_slice() {
        [m] => *m,
        [] => return invalid("missing [meta] section"),
        [_, second, ..] => return parse_err(second.line, "more than one [meta] section"),
    };

    // Rooms first; everything else refers to them.
    let mut room_index: HashMap<String, usize> = HashMap::new();
    let mut raw_exits: Vec<Vec<(usize, String, String)>> = Vec::new();
    let mut rooms = Vec::new();
    for b in blocks.iter().filter(|b| b.kind == "room") {
        let (line, id) = b.required("id")?;
        let id = single_token(line, "room id", id)?;
        if room_index.insert(id.clone(), rooms.len()).is_some() {
            return parse_err(line, format!("duplicate room id '{id}'"));
        }
        let name = b.single("name")?.map_or(id.clone(), |(_, n)| n.to_string());
        let description = b.single("description")?.map_or(String::new(), |(_, d)| d.to_string());
        let mut exits = Vec::new();
        for (line, v) in b.all("exit") {
            let Some((dir, target)) = v.split_once("->") else {
                return parse_err(line, "expected 'exit: <direction> -> <room-id>'");
            };
            let dir = single_token(line, "direction", dir)?;
            if exits.iter().any(|(_, d, _): &(usize, String, String)| *d == dir) {
                return parse_err(line, format!("duplicate exit '{dir}'"));
            }
            exits.push((line, dir, target.trim().to_lowercase()));
        }
        raw_exits.push(exits);
        rooms.push(RoomDef {
            id,
            name,
            description,
            exits: Vec::new(),
        });
    }
    if rooms.is_empty() {
        return invalid("no rooms declared");
    }
    for (room, exits) in rooms.iter_mut().zip(raw_exits) {
        for (_, dir, target) in exits {
            let Some(&t) = room_index.get(&target) else {
                return invalid(format!(
                    "exit '{dir}' of room '{}' leads to undeclared room '{target}'",
                    room.id
                ));
            };
            room.exits.push((dir, t));
        }
    }

    let mut npcs = Vec::new();
    let mut npc_index: HashMap<String, usize> = HashMap::new();
    for b in blocks.iter().filter(|b| b.kind == "npc") {
        let (line, id) = b.required("id")?;
        let id = single_token(line, "npc id", id)?;
        let name = match b.single("name")? {
            Some((l, n)) => single_token(l, "npc name", n)?,
            None => id.clone(),
        };
        let (lline, loc) = b.required("location")?;
        let Some(&location) = room_index.get(&loc.to_lowercase()) else {
            return invalid(format!("npc '{id}' is located in undeclared room '{loc}' (line {lline})"));
        };
        if npc_index.insert(id.clone(), npcs.len()).is_some() {
            return parse_err(line, format!("duplicate npc id '{id}'"));
        }
        let description = b.single("description")?.map_or(String::new(), |(_, d)| d.to_string());
        npcs.push(NpcDef {
            id,
            name,
            location,
            description,
        });
    }

    // Objects may sit inside containers declared later, so collect ids first.
    let object_blocks: Vec<&Block> = blocks.iter().filter(|b| b.kind == "object").collect();
    let mut object_index: HashMap<String, usize> = HashMap::new();
    for (i, b) in object_blocks.iter().enumerate() {
        let (line, id) = b.required("id")?;
        let id = single_token(line, "object id", id)?;
        if object_index.insert(id.clone(), i).is_some() {
            return parse_err(line, format!("duplicate object id '{id}'"));
        }
    }
    let mut objects = Vec::new();
    for b in &object_blocks {
        let (line, id) = b.required("id")?;
        let id = single_token(line, "object id", id)?;
        let name = match b.single("name")? {
            Some((l, n)) => single_token(l, "object name", n)?,
            None => id.clone(),
        };
        let (lline, loc) = b.required("location")?;
        let loc = loc.to_lowercase();
        let location = if let Some(&r) = room_index.get(&loc) {
            Location::Room(r)
        } else if let Some(&n) = npc_index.get(&loc) {
            Location::Npc(n)
        } else if let Some(&o) = object_index.get(&loc) {
            Location::Inside(o)
        } else {
            return invalid(format!(
                "object '{id}' is located in undeclared place '{loc}' (line {lline})"
            ));
        };
        objects.push(ObjectDef {
            id,
            name,
            location,
            portable: b.flag("portable")?,
            wearable: b.flag("wearable")?,
            container: b.flag("container")?,
            closed: b.flag("closed")?,
            owned: b.flag("owned")?,
        });
    }
    for o in &objects {
        if let Location::Inside(c) = o.location {
            if !objects[c].container {
                return invalid(format!("object '{}' is inside '{}', which is not a container", o.id, objects[c].id));
            }
            if matches!(objects[c].location, Location::Inside(_)) {
                return invalid(format!("container '{}' may not itself be inside a container", objects[c].id));
            }
        }
    }

    let verbs: Vec<ActionTemplate> = match meta.single("verbs")? {
        Some((line, list)) => {
            let mut out = Vec::new();
            for v in list.split(',') {
                let v = single_token(line, "verb", v)?;
                if !KNOWN_VERBS.contains(&v.as_str()) {
                    return parse_err(line, format!("unknown verb '{v}'"));
                }
                if out.iter().any(|t: &ActionTemplate| t.verb == v) {
                    return parse_err(line, format!("duplicate verb '{v}'"));
                }
                out.push(ActionTemplate::for_verb(&v));
            }
            out
        }
        None => KNOWN_VERBS.iter().map(|v| ActionTemplate::for_verb(v)).collect(),
    };

    let name = meta.single("name")?.map_or(String::from("world"), |(_, n)| n.to_string());
    let (sline, start) = meta.required("start")?;
    let Some(&start_room) = room_index.get(&start.to_lowercase()) else {
        return invalid(format!("start room '{start}' is not declared (line {sline})"));
    };
    let (eline, exit) = meta.required("exit")?;
    let Some(&exit_room) = room_index.get(&exit.to_lowercase()) else {
        return invalid(format!("exit room '{exit}' is not declared (line {eline})"));
    };
    if start_room == exit_room {
        return invalid("start room and exit room must differ");
    }
    let step_cap = match meta.single("step_cap")? {
        None => 50,
        Some((line, v)) => match v.parse::<u32>() {
            Ok(n) if n > 0 => n,
            _ => return parse_err(line, format!("step_cap must be a positive integer, got '{v}'")),
        },
    };
    let max_score = meta
        .single("max_score")?
        .map(|(line, v)| parse_number(line, v))
        .transpose()?;

    let spec_probe = WorldSpec {
        name,
        verbs,
        rooms,
        objects,
        npcs,
        characters: Vec::new(),
        preconditions: Vec::new(),
        start_room,
        exit_room,
        step_cap,
        max_score,
    };
    let object_vocab: BTreeSet<String> = spec_probe.object_vocabulary().into_iter().collect();
    if object_vocab.len() != spec_probe.object_vocabulary().len() {
        return invalid("directions, object names and npc names must all be distinct");
    }
    let check_pattern = |line: usize, p: &ActionPattern| -> Result<(), WorldError> {
        let Some(t) = spec_probe.verbs.iter().find(|t| t.verb == p.verb) else {
            return parse_err(line, format!("verb '{}' is not in the verb list", p.verb));
        };
        match (&p.object, t.arity) {
            (None, 0) => Ok(()),
            (Some(o), 1) if object_vocab.contains(o) => Ok(()),
            (Some(o), 1) => parse_err(line, format!("'{o}' is not a direction, object or npc")),
            _ => parse_err(line, format!("'{p}' does not match the arity of '{}'", p.verb)),
        }
    };

    let mut preconditions = Vec::new();
    for (line, v) in meta.all("requires") {
        let Some((pat, needs)) = v.split_once('=') else {
            return parse_err(line, "expected 'requires: <verb> <object?> = <object>'");
        };
        let pattern = parse_pattern(line, pat)?;
        check_pattern(line, &pattern)?;
        let needs = single_token(line, "required object", needs)?;
        if spec_probe.object_by_name(&needs).is_none() {
            return parse_err(line, format!("required object '{needs}' is not declared"));
        }
        preconditions.push(Precondition { pattern, needs });
    }

    let mut characters = Vec::new();
    for b in blocks.iter().filter(|b| b.kind == "character") {
        let (line, name) = b.required("name")?;
        let name = single_token(line, "character name", name)?;
        if characters.iter().any(|c: &CharacterDef| c.name == name) {
            return parse_err(line, format!("duplicate character '{name}'"));
        }
        let mut rewarded_actions: Vec<RewardedAction> = Vec::new();
        for (line, v) in b.all("reward") {
            let Some((pat, pts)) = v.rsplit_once('=') else {
                return parse_err(line, "expected 'reward: <verb> <object?> = <points>'");
            };
            let pattern = parse_pattern(line, pat)?;
            check_pattern(line, &pattern)?;
            if rewarded_actions.iter().any(|r| r.pattern == pattern) {
                return parse_err(line, format!("duplicate reward for '{pattern}'"));
            }
            let reward = parse_number(line, pts)?;
            if reward < 0.0 {
                return parse_err(line, "rewards must be non-negative");
            }
            rewarded_actions.push(RewardedAction { pattern, reward });
        }
        let exit_reward = match b.single("exit_reward")? {
            Some((line, v)) => parse_number(line, v)?,
            None => 0.0,
        };
        if exit_reward < 0.0 {
            return invalid(format!("character '{name}' has a negative exit reward"));
        }
        characters.push(CharacterDef {
            name,
            rewarded_actions,
            exit_reward,
        });
    }

    let spec = WorldSpec {
        characters,
        preconditions,
        ..spec_probe
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &WorldSpec) -> Result<(), WorldError> {
    if bfs_path(&spec.rooms, spec.start_room, spec.exit_room).is_none() {
        return invalid(format!(
            "exit room '{}' is unreachable from start room '{}'",
            spec.rooms[spec.exit_room].id, spec.rooms[spec.start_room].id
        ));
    }
    if spec.characters.is_empty() {
        return invalid("no characters declared");
    }
    let mut seen_names: BTreeMap<&str, ()> = BTreeMap::new();
    for c in &spec.characters {
        seen_names.insert(&c.name, ());
        if c.rewarded_actions.is_empty() {
            return invalid(format!("character '{}' has no rewarded actions", c.name));
        }
        if let Some(r) = c.rewarded_actions.iter().find(|r| r.reward <= c.exit_reward) {
            return invalid(format!(
                "exit reward of '{}' ({}) must be smaller than every action reward, but '{}' pays {}",
                c.name, c.exit_reward, r.pattern, r.reward
            ));
        }
        if let Some(max) = spec.max_score {
            if (c.max_score() - max).abs() > 1e-4 {
                return invalid(format!(
                    "rewards of '{}' sum to {}, expected max_score {}",
                    c.name,
                    c.max_score(),
                    max
                ));
            }
        }
    }
    Ok(())
}
