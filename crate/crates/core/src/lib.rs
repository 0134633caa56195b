//! Compiler and cycle-level simulator for a unified CNN/GNN accelerator.

pub mod model_ir;
pub mod primitives;
pub mod lowering;
pub mod arch;
pub mod planner;
pub mod isa;
pub mod oracle;
pub mod simulator;
pub mod bench;
pub mod pipeline;
