pub mod cache;
pub mod cli;
pub mod graph;
pub mod render;
pub mod scene;
pub mod service;
pub mod volume;
