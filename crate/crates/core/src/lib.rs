//! Core of a show-hide disclosure game: data model, chart language,
//! transform engine, signal rubric, puzzle generation and game state.

pub mod chart_spec;
pub mod data_model;
pub mod expr;
pub mod game_core;
pub mod puzzle_gen;
pub mod signal_rubric;
pub mod stats;
pub mod transform_engine;
