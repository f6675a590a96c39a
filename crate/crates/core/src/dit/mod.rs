//! Toy video diffusion transformer: token layout, frame-skip rotary
//! positions, segment attention mask, inference offset and segment-scaled
//! LoRA adapters.

mod config;
mod layout;
mod lora;
mod mask;
mod model;
mod rope;
mod text;

pub use config::{Mode, ModelConfig, SegmentScales};
pub use layout::{build_token_layout, Segment, TokenLayout};
pub use lora::{lora_apply, LoraAdapter};
pub use mask::{apply_inference_offset, build_attention_mask, inference_offset, is_blocked_pair};
pub use model::{is_lora_param, Dit, ForwardOptions, ForwardPlan, ADAPTED_LINEARS};
pub use rope::{apply_rope, fspe_positions, RopeTable};
pub use text::{tokenize_prompt, Vocab, DEPTH_TOKEN, PAD, UNK};
