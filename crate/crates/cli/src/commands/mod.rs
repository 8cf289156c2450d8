pub mod eval;
pub mod gen;
pub mod serve;
pub mod sweep;
pub mod theory;
pub mod train;
