use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Architecture hyperparameters. Images are square.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
    pub in_channels: usize,
}

impl ModelConfig {
    /// ViT-Base/16 at 224 px, two classes.
    pub fn paper() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            embed_dim: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_dim: 3072,
            num_classes: 2,
            in_channels: 3,
        }
    }

    /// Desk-scale model that trains in seconds.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 8,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            num_classes: 2,
            in_channels: 3,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        let fields = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("num_classes", self.num_classes),
            ("in_channels", self.in_channels),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        Ok(())
    }

    /// Patches per image, `(image_size / patch_size)^2`.
    pub fn num_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    /// Tokens per image including the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Length of one flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_geometry() {
        let p = ModelConfig::paper();
        p.validate().unwrap();
        assert_eq!((p.num_patches(), p.seq_len(), p.head_dim(), p.patch_dim()), (196, 197, 64, 768));
        let t = ModelConfig::tiny();
        t.validate().unwrap();
        assert_eq!((t.num_patches(), t.seq_len(), t.head_dim(), t.patch_dim()), (16, 17, 16, 192));
        assert_eq!(ModelConfig::preset("tiny"), Some(t));
        assert_eq!(ModelConfig::preset("huge"), None);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::tiny();
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.num_layers = 0;
        assert!(c.validate().unwrap_err().to_string().contains("num_layers"));
    }
}
