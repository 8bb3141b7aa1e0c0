pub mod analysis;
pub mod data;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod numcore;
pub mod training;
