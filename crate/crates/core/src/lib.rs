//! A single actor-critic policy that plays several characters in a text
//! world, selected by learned soft prompts, plus a frozen-core attention
//! module that learns blended characters from few games.

pub mod agent;
pub mod attention;
pub mod grad;
pub mod rng;
pub mod train;
pub mod world;
