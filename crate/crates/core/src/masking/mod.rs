//! Feature-map regularizers: local feature masking and its baselines.

mod baselines;
mod block;
mod lfm;

pub use baselines::{
    channel_dropout_apply, channel_dropout_mask, cutout_apply, cutout_span, element_dropout_apply,
    element_dropout_mask,
};
pub use block::FeatureBlock;
pub use lfm::{
    decision_log, draw_decision, format_sig9, lfm_apply, masked_elements, replay_decisions, sample_mask_rect,
    select_channels, LfmConfig, MaskDecision, MaskRect,
};
