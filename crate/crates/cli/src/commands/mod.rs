pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod synth;
pub mod train;
