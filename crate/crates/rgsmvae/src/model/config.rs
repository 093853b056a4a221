//! Model hyperparameters.
//!
//! `ModelConfig::default()` reproduces the full-width reference
//! architecture; `desk()` is a narrow preset with the same topology for
//! laptop-scale training runs, and `shrunken(f)` divides widths by `f` for
//! fast f64 gradient verification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconNorm {
    Mse,
    L1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Frames per utterance.
    pub frames: usize,
    /// Mel bins per frame.
    pub mel_bins: usize,
    /// Channels of the encoder/decoder conv stacks.
    pub conv_channels: usize,
    /// Encoder BiLSTM hidden width per direction.
    pub bilstm_hidden: usize,
    /// Encoder BiLSTM layer count.
    pub bilstm_layers: usize,
    /// Shared wide FC width (encoder bottleneck and decoder expansion).
    pub fc_width: usize,
    /// Speaker latent dimension.
    pub d_s: usize,
    /// Content latent dimension.
    pub d_c: usize,
    /// Decoder input width; must equal d_s + d_c.
    pub decoder_input_width: usize,
    /// Per-frame feature width after the decoder expansion reshape.
    pub dec_frame_width: usize,
    /// Hidden width of the first decoder LSTM.
    pub dec_lstm1_hidden: usize,
    /// Layer count of the second decoder LSTM (its hidden width is
    /// heads * head_dim).
    pub dec_lstm2_layers: usize,
    /// Self-attention head count.
    pub heads: usize,
    /// Per-head dimension.
    pub head_dim: usize,
    /// Include the decoder self-attention layer.
    pub use_attention: bool,
    /// Residual connection around the attention layer.
    pub attention_residual: bool,
    /// Post-Net hidden channels.
    pub postnet_channels: usize,
    /// Post-Net depth.
    pub postnet_layers: usize,
    /// KL weight (>= 1 encourages disentangling).
    pub beta_vae: f64,
    /// Norm used by both reconstruction terms.
    pub recon_norm: ReconNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 64,
            mel_bins: 80,
            conv_channels: 512,
            bilstm_hidden: 64,
            bilstm_layers: 2,
            fc_width: 2048,
            d_s: 4,
            d_c: 28,
            decoder_input_width: 32,
            dec_frame_width: 128,
            dec_lstm1_hidden: 512,
            dec_lstm2_layers: 2,
            heads: 8,
            head_dim: 128,
            use_attention: true,
            attention_residual: true,
            postnet_channels: 512,
            postnet_layers: 5,
            beta_vae: 1.0,
            recon_norm: ReconNorm::Mse,
        }
    }
}

impl ModelConfig {
    /// Narrow preset trainable in minutes on a laptop CPU. Keeps the full
    /// topology, 64x80 features, and wide-enough layers (> 128) for the
    /// regularizer to have targets.
    pub fn desk() -> Self {
        ModelConfig {
            frames: 64,
            mel_bins: 80,
            conv_channels: 48,
            bilstm_hidden: 16,
            bilstm_layers: 2,
            fc_width: 256,
            d_s: 4,
            d_c: 28,
            decoder_input_width: 32,
            dec_frame_width: 32,
            dec_lstm1_hidden: 48,
            dec_lstm2_layers: 1,
            heads: 8,
            head_dim: 24,
            use_attention: true,
            attention_residual: true,
            postnet_channels: 48,
            postnet_layers: 5,
            beta_vae: 1.0,
            recon_norm: ReconNorm::Mse,
        }
    }

    /// Verification preset: widths divided by `f`, short sequences.
    pub fn shrunken(f: usize) -> Self {
        let full = ModelConfig::default();
        ModelConfig {
            frames: 8,
            mel_bins: full.mel_bins,
            conv_channels: full.conv_channels / f,
            bilstm_hidden: full.bilstm_hidden / f,
            bilstm_layers: 2,
            fc_width: full.fc_width / f,
            d_s: 4,
            d_c: 28,
            decoder_input_width: 32,
            dec_frame_width: full.dec_frame_width / f,
            dec_lstm1_hidden: full.dec_lstm1_hidden / f,
            dec_lstm2_layers: 2,
            heads: 8,
            head_dim: full.head_dim / f,
            use_attention: true,
            attention_residual: true,
            postnet_channels: full.postnet_channels / f,
            postnet_layers: 5,
            beta_vae: 1.0,
            recon_norm: ReconNorm::Mse,
        }
    }

    /// Width of the decoder trunk where attention operates.
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Per-frame width leaving the encoder BiLSTM.
    pub fn enc_frame_width(&self) -> usize {
        2 * self.bilstm_hidden
    }

    /// Flattened width feeding the shared encoder FC.
    pub fn enc_flat_width(&self) -> usize {
        self.frames * self.enc_frame_width()
    }

    /// Concatenated final BiLSTM hidden states feeding the speaker FC.
    pub fn speaker_branch_width(&self) -> usize {
        self.bilstm_layers * 2 * self.bilstm_hidden
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frames", self.frames),
            ("mel_bins", self.mel_bins),
            ("conv_channels", self.conv_channels),
            ("bilstm_hidden", self.bilstm_hidden),
            ("bilstm_layers", self.bilstm_layers),
            ("fc_width", self.fc_width),
            ("d_s", self.d_s),
            ("d_c", self.d_c),
            ("dec_frame_width", self.dec_frame_width),
            ("dec_lstm1_hidden", self.dec_lstm1_hidden),
            ("dec_lstm2_layers", self.dec_lstm2_layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("postnet_channels", self.postnet_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        if self.d_s + self.d_c != self.decoder_input_width {
            return Err(Error::Config(format!(
                "latent split d_s + d_c = {} does not match decoder input width {}",
                self.d_s + self.d_c,
                self.decoder_input_width
            )));
        }
        if self.postnet_layers < 2 {
            return Err(Error::Config("postnet_layers must be at least 2".into()));
        }
        if self.beta_vae < 0.0 || !self.beta_vae.is_finite() {
            return Err(Error::Config("beta_vae must be a nonnegative finite value".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_reproduces_reference_shapes() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.enc_flat_width(), 8192);
        assert_eq!(c.speaker_branch_width(), 256);
        assert_eq!(c.attn_width(), 1024);
        assert_eq!(c.d_s + c.d_c, 32);
        assert_eq!(c.frames * c.dec_frame_width, 8192);
    }

    #[test]
    fn latent_split_mismatch_is_rejected() {
        let c = ModelConfig { d_s: 8, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::shrunken(8).validate().unwrap();
    }

    #[test]
    fn empty_json_object_is_a_valid_config() {
        let c: ModelConfig = serde_json::from_str("{}").unwrap();
        c.validate().unwrap();
        assert_eq!(c.fc_width, 2048);
    }
}
