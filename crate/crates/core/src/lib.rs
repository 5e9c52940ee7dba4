//! An embeddable columnar query engine that discovers data dependencies from
//! the plans it runs and uses them to rewrite later queries.

pub mod bench;
pub mod candidates;
pub mod catalog;
pub mod datagen;
pub mod engine;
pub mod executor;
pub mod optimizer;
pub mod plan;
pub mod propagation;
pub mod storage;
pub mod validation;
