//! Procedural navigation worlds, episodes, and environment dynamics.

pub mod dynamics;
pub mod instruction;
pub mod io;
pub mod paths;
pub mod split;
pub mod world;

pub use dynamics::{distance_to_goal, feature_dim, observe, step, AgentState, Candidate, Observation};
pub use instruction::{synthesize_instruction, Direction, Token, Vocabulary};
pub use paths::{dijkstra, next_hop, path_length, shortest_path};
pub use split::{make_splits, Episode, SplitConfig, SplitName, SplitSpec};
pub use world::{euclid, generate_world, NavGraph, NavNode, WorldParams};
