//! Dataset distillation: gradient matching and trajectory matching, each
//! with optional zero-masking of the synthetic batch.

mod dc;
pub mod mask;
mod mtt;
mod synthetic;

pub use dc::{dc_loss, dc_meta_grad, distill_dc, DcConfig, DcObjective, MaskTarget};
pub use mask::{apply_mask, make_mask, make_masks, MaskMode, MaskSpec};
pub use mtt::{
    distill_mtt, mtt_loss, mtt_meta_grad, record_trajectory, ExpertTrajectory, MttConfig, MttObjective,
};
pub use synthetic::{balanced_labels, SyntheticSet};
