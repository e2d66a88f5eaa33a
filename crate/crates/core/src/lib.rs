pub mod compiler;
pub mod geometry;
pub mod logic;
pub mod similarity;
pub mod config;
pub mod solver;
pub mod inference;
pub mod oracle;
pub mod testkit;
