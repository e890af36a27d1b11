pub mod attention_map;
pub mod equivariance;
pub mod eval;
pub mod grid;
pub mod md;
pub mod ratio;
pub mod train;
