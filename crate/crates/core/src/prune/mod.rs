//! Packing-aligned block pruning during training, and structural shrinking.

mod conv_dense;
mod iterative;
mod masks;
mod schedule;
mod shrink;

pub use conv_dense::{conv_to_dense_view, im2col, ConvDenseShapes};
pub use iterative::{iterative_block_prune, PruneState};
pub use masks::{generate_block_masks, prunable_layers, prune_step, BlockMask, BlockShapes};
pub use schedule::PruningSchedule;
pub use shrink::{shrink, shrink_structure, sparsity_report, LayerSparsity, SparsityReport};
