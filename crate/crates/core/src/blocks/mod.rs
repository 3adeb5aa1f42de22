//! Architectural blocks and the encoder/decoder stages built from them.

mod csffl;
mod fbgm;
mod ffgml;
pub mod mixer;
mod smffl;
mod srssb;
mod stage;
mod vssb;

use serde::{Deserialize, Serialize};

pub use csffl::{csffl_forward, Csffl};
pub use fbgm::{fbgm_forward, Fbgm};
pub use ffgml::{ffgml_forward, Ffgml};
pub use mixer::{AttentionMixer, ConvMixer, MixerBuilder, MixerRegistry, TokenMixer};
pub use smffl::{smffl_forward, Smffl};
pub use srssb::{srssb_forward, Srssb};
pub use stage::{decoder_block_forward, encoder_block_forward, DecoderBlock, EncoderBlock, SkipMode};
pub use vssb::{vssb_forward, Vssb};

use crate::scan_core::DEFAULT_STATE_DIM;

/// Per-block settings shared by every stage. `channels` is filled in by the
/// network for each stage and is not part of the serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    #[serde(skip)]
    pub channels: usize,
    pub ssm_state_dim: usize,
    pub smffl_hidden_ratio: f64,
    pub csffl_expansion: usize,
    /// Registered token-mixer name: `vssb`, `conv3x3` or `self_attention`.
    pub variant: String,
    pub use_srssb: bool,
    pub use_fbgm: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            ssm_state_dim: DEFAULT_STATE_DIM,
            smffl_hidden_ratio: 0.5,
            csffl_expansion: 2,
            variant: mixer::VSSB.to_string(),
            use_srssb: true,
            use_fbgm: true,
        }
    }
}

impl BlockConfig {
    pub fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..self.clone() }
    }
}
