use crate::error::{Error, Result};
use crate::manifest::Manifest;

/// How the three feature embeddings become the `d`-wide feature block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Each feature table is `d` wide; the three lookups are summed.
    SumThenConcat,
    /// Per-feature widths, concatenated; they must add up to `d`.
    ConcatAll { pos: usize, case: usize, postag: usize },
}

impl FusionMode {
    /// Concat mode with `d` split as evenly as the three features allow.
    pub fn concat_even(d: usize) -> Self {
        let case = d / 4;
        let postag = d / 4;
        FusionMode::ConcatAll {
            pos: d - case - postag,
            case,
            postag,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Model width `D`.
    pub d_model: usize,
    /// Width `d` of the source feature block. The source word embedding
    /// gets `D − d` columns.
    pub feature_dim: usize,
    /// When false the feature block (if `d > 0`) is a constant zero pad.
    pub use_features: bool,
    pub fusion: FusionMode,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub positional_encoding: bool,
    pub vocab_size: usize,
    pub pos_vocab_size: usize,
}

pub const CASE_VOCAB: usize = 2;
pub const POSTAG_VOCAB: usize = 4;

impl ModelConfig {
    /// Desk-scale syntax-infused configuration.
    pub fn toy(vocab_size: usize, pos_vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 48,
            feature_dim: 4,
            use_features: true,
            fusion: FusionMode::SumThenConcat,
            layers: 2,
            heads: 4,
            ffn_width: 128,
            dropout: 0.1,
            label_smoothing: 0.1,
            positional_encoding: true,
            vocab_size,
            pos_vocab_size,
        }
    }

    /// The same shape with the feature block removed and its width handed
    /// back to the word embedding.
    pub fn baseline(&self) -> Self {
        ModelConfig {
            feature_dim: 0,
            use_features: false,
            ..self.clone()
        }
    }

    pub fn word_dim(&self) -> usize {
        self.d_model - self.feature_dim
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.layers == 0 || self.ffn_width == 0 {
            return fail("d_model, layers and ffn_width must be positive".into());
        }
        if self.feature_dim >= self.d_model {
            return fail(format!(
                "feature_dim {} leaves no room for word embeddings in d_model {}",
                self.feature_dim, self.d_model
            ));
        }
        if self.use_features && self.feature_dim == 0 {
            return fail("features enabled with feature_dim 0".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if let FusionMode::ConcatAll { pos, case, postag } = self.fusion {
            if self.use_features && pos + case + postag != self.feature_dim {
                return fail(format!(
                    "concat widths {pos}+{case}+{postag} do not sum to feature_dim {}",
                    self.feature_dim
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("dropout and label_smoothing must lie in [0, 1)".into());
        }
        if self.vocab_size <= crate::tokenizer::SPECIALS.len() || self.pos_vocab_size == 0 {
            return fail("vocabulary sizes too small".into());
        }
        Ok(())
    }

    pub fn write_manifest(&self, m: &mut Manifest) {
        m.set("d_model", self.d_model);
        m.set("feature_dim", self.feature_dim);
        m.set("use_features", self.use_features);
        match self.fusion {
            FusionMode::SumThenConcat => m.set("fusion", "sum"),
            FusionMode::ConcatAll { pos, case, postag } => {
                m.set("fusion", "concat");
                m.set("pos_dim", pos);
                m.set("case_dim", case);
                m.set("postag_dim", postag);
            }
        }
        m.set("layers", self.layers);
        m.set("heads", self.heads);
        m.set("ffn_width", self.ffn_width);
        m.set("dropout", self.dropout);
        m.set("label_smoothing", self.label_smoothing);
        m.set("positional_encoding", self.positional_encoding);
        m.set("vocab_size", self.vocab_size);
        m.set("pos_vocab_size", self.pos_vocab_size);
    }

    /// Reads every key present in `m` over `base`.
    pub fn from_manifest(m: &Manifest, base: &ModelConfig) -> Result<Self> {
        let mut c = base.clone();
        macro_rules! read {
            ($($field:ident),*) => {$(
                if let Some(v) = m.get(stringify!($field))? { c.$field = v; }
            )*};
        }
        read!(d_model, feature_dim, use_features, layers, heads, ffn_width, dropout, label_smoothing,
              positional_encoding, vocab_size, pos_vocab_size);
        c.fusion = match m.get_str("fusion") {
            None => base.fusion,
            Some("sum") => FusionMode::SumThenConcat,
            Some("concat") => {
                let even = FusionMode::concat_even(c.feature_dim);
                let FusionMode::ConcatAll { pos, case, postag } = even else { unreachable!() };
                FusionMode::ConcatAll {
                    pos: m.get("pos_dim")?.unwrap_or(pos),
                    case: m.get("case_dim")?.unwrap_or(case),
                    postag: m.get("postag_dim")?.unwrap_or(postag),
                }
            }
            Some(other) => return Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        };
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        let c = ModelConfig::toy(100, 18);
        c.validate().unwrap();
        assert_eq!(c.word_dim(), 44);
        assert_eq!(c.head_dim(), 12);
        c.baseline().validate().unwrap();
        assert_eq!(c.baseline().word_dim(), 48);
    }

    #[test]
    fn base_scale_config_is_expressible() {
        let c = ModelConfig {
            d_model: 512,
            feature_dim: 20,
            layers: 6,
            heads: 8,
            ffn_width: 2048,
            ..ModelConfig::toy(32000, 18)
        };
        c.validate().unwrap();
        assert_eq!(c.word_dim(), 492);
        assert_eq!(c.head_dim(), 64);
    }

    #[test]
    fn rejects_bad_shapes() {
        let base = ModelConfig::toy(100, 18);
        assert!(ModelConfig { feature_dim: 48, ..base.clone() }.validate().is_err());
        assert!(ModelConfig { heads: 5, ..base.clone() }.validate().is_err());
        let bad_concat = ModelConfig {
            fusion: FusionMode::ConcatAll { pos: 2, case: 1, postag: 2 },
            ..base.clone()
        };
        assert!(bad_concat.validate().is_err());
        let concat = ModelConfig { fusion: FusionMode::concat_even(4), ..base };
        concat.validate().unwrap();
    }

    #[test]
    fn manifest_roundtrip() {
        let c = ModelConfig {
            fusion: FusionMode::ConcatAll { pos: 2, case: 1, postag: 1 },
            ..ModelConfig::toy(100, 18)
        };
        let mut m = Manifest::new();
        c.write_manifest(&mut m);
        let back = ModelConfig::from_manifest(&m, &ModelConfig::toy(1, 1)).unwrap();
        assert_eq!(back, c);
    }
}
