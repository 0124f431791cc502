pub mod attention;
pub mod attention_map;
pub mod encoders;
pub mod error;
pub mod fovea;
pub mod grid;
pub mod harness;
pub mod nn;
pub mod planner;
pub mod seed;
pub mod world;

pub use attention_map::{AttentionMap, GRID_CELLS, GRID_COLS, GRID_ROWS};
pub use error::{Error, Result};
pub use grid::FeatureGrid;
