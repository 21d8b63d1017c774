//! Text-world engine: world definitions, deterministic transitions,
//! character rewards and observation rendering.

mod engine;
mod spec;

pub use engine::{
    EngineError, EpisodeTrace, GameState, Observation, Place, StepOutcome, TraceStep,
    NOTHING_HAPPENS,
};
pub use spec::{
    ActionPattern, ActionTemplate, CharacterDef, Location, NpcDef, ObjectDef, Precondition,
    RewardedAction, RoomDef, WorldError, WorldSpec, KNOWN_VERBS,
};

/// Maps that ship with the crate.
pub mod maps {
    pub const BASE: &str = include_str!("../../maps/base.world");
    pub const THIEF_FIRST: &str = include_str!("../../maps/thief_first.world");
    pub const ADVENTURER_FIRST: &str = include_str!("../../maps/adventurer_first.world");
    pub const ALTERNATING: &str = include_str!("../../maps/alternating.world");

    /// (name, text) of every shipped map.
    pub const ALL: [(&str, &str); 4] = [
        ("base", BASE),
        ("thief-first", THIEF_FIRST),
        ("adventurer-first", ADVENTURER_FIRST),
        ("alternating", ALTERNATING),
    ];

    pub fn by_name(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }
}

/// Parses and validates a world definition.
pub fn load_world(text: &str) -> Result<WorldSpec, WorldError> {
    WorldSpec::parse(text)
}
