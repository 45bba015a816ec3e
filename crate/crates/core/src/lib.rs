//! Load-frequency control of interconnected power grids: centralized LQG
//! and its privacy-preserving distributed approximation by consensus.

pub mod consensus;
pub mod controllers;
pub mod experiment;
pub mod grid;
pub mod grid_model;
pub mod linalg;
pub mod lqg;
pub mod sim;
pub mod topology;
