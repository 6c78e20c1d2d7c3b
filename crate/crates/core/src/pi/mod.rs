//! Private inference over batch-packed ciphertexts: compilation, static costing and
//! parallel execution.

mod cost;
mod exec;
mod program;

pub use cost::{analyze_cost, CostReport, LayerCost};
pub use exec::{execute, execute_with, infer, Execution};
pub use program::{compile, poly_depth, PiProgram, Step};
