use crate::error::{Error, Result};
use crate::nn::TransformerConfig;
use std::fmt;
use std::str::FromStr;

/// Architectures compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    RadioNet,
    RadioNetNoSkip,
    RadioNetNoGe,
    RadioNetPe,
    Unet,
    TransUnet,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Self::Unet,
        Self::TransUnet,
        Self::RadioNetNoSkip,
        Self::RadioNetNoGe,
        Self::RadioNetPe,
        Self::RadioNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RadioNet => "radionet",
            Self::RadioNetNoSkip => "radionet_no_skip",
            Self::RadioNetNoGe => "radionet_no_ge",
            Self::RadioNetPe => "radionet_pe",
            Self::Unet => "unet",
            Self::TransUnet => "transunet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown model variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Full architectural description of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_res: usize,
    pub output_res: usize,
    /// Channels of the first encoder stage.
    pub ch: usize,
    /// Channel doubling stops after this many stages.
    pub channel_cap: u32,
    pub enc_stages: usize,
    pub dec_stages: usize,
    /// Patches per side in a spread layer.
    pub patch_grid: usize,
    pub transformer: TransformerConfig,
    pub use_spread: bool,
    pub use_ge: bool,
    pub use_pe: bool,
    pub use_spread_skip: bool,
    /// One transformer layer over bottleneck pixels, without spread layers.
    pub bottleneck_transformer: bool,
}

impl ModelConfig {
    /// Flags for `variant` on top of the desk-scale shape.
    pub fn build_variant(variant: Variant) -> Self {
        let base = Self {
            variant,
            input_res: 128,
            output_res: 32,
            ch: 16,
            channel_cap: 3,
            enc_stages: 4,
            dec_stages: 2,
            patch_grid: 8,
            transformer: TransformerConfig {
                d_item: 128,
                n_heads: 4,
                d_hidden: 256,
            },
            use_spread: true,
            use_ge: true,
            use_pe: false,
            use_spread_skip: true,
            bottleneck_transformer: false,
        };
        match variant {
            Variant::RadioNet => base,
            Variant::RadioNetNoSkip => Self { use_spread_skip: false, ..base },
            Variant::RadioNetNoGe => Self { use_ge: false, ..base },
            Variant::RadioNetPe => Self { use_ge: false, use_pe: true, ..base },
            Variant::Unet => Self {
                use_spread: false,
                use_ge: false,
                use_spread_skip: false,
                ..base
            },
            Variant::TransUnet => Self {
                use_spread: false,
                use_ge: false,
                use_pe: true,
                use_spread_skip: false,
                bottleneck_transformer: true,
                ..base
            },
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::build_variant(name.parse()?))
    }

    /// Small shape for gradient checks and quick tests.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            input_res: 32,
            output_res: 16,
            ch: 4,
            enc_stages: 2,
            dec_stages: 1,
            transformer: TransformerConfig {
                d_item: 32,
                n_heads: 2,
                d_hidden: 64,
            },
            ..Self::build_variant(variant)
        }
    }

    /// Number of input feature channels the encoder expects.
    pub fn input_channels(&self) -> usize {
        if self.use_ge {
            6
        } else {
            4
        }
    }

    /// Channels produced by encoder stage `s` (1-based).
    pub fn stage_channels(&self, s: usize) -> usize {
        self.ch << (s as u32 - 1).min(self.channel_cap)
    }

    /// Spatial side of encoder stage `s` output.
    pub fn stage_res(&self, s: usize) -> usize {
        self.input_res >> s
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.ch == 0 || self.enc_stages == 0 || self.input_res == 0 {
            return cfg("model.ch, model.enc_stages and model.input_res must be positive".into());
        }
        if self.dec_stages >= self.enc_stages {
            return cfg(format!(
                "model.dec_stages {} must be below model.enc_stages {}",
                self.dec_stages, self.enc_stages
            ));
        }
        if self.input_res % (1 << self.enc_stages) != 0 {
            return cfg(format!(
                "input resolution {} not divisible by 2^{}",
                self.input_res, self.enc_stages
            ));
        }
        let expect = self.stage_res(self.enc_stages - self.dec_stages);
        if self.output_res != expect {
            return cfg(format!(
                "output resolution {} does not match decoder resolution {expect}",
                self.output_res
            ));
        }
        if self.use_ge && self.use_pe {
            return cfg("model.use_ge and model.use_pe are mutually exclusive".into());
        }
        if self.use_spread && self.bottleneck_transformer {
            return cfg("bottleneck transformer is only defined without spread layers".into());
        }
        if self.use_spread || self.bottleneck_transformer {
            self.transformer.validate()?;
        }
        if self.use_spread {
            for j in 1..=self.dec_stages {
                let r = self.stage_res(self.enc_stages - j);
                if self.patch_grid == 0 || r % self.patch_grid != 0 {
                    return cfg(format!("patch grid {} does not divide feature size {r}", self.patch_grid));
                }
            }
        }
        Ok(())
    }

    /// `(key, value)` pairs covering every field.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.transformer;
        vec![
            ("variant", self.variant.to_string()),
            ("input_res", self.input_res.to_string()),
            ("output_res", self.output_res.to_string()),
            ("ch", self.ch.to_string()),
            ("channel_cap", self.channel_cap.to_string()),
            ("enc_stages", self.enc_stages.to_string()),
            ("dec_stages", self.dec_stages.to_string()),
            ("patch_grid", self.patch_grid.to_string()),
            ("d_item", t.d_item.to_string()),
            ("n_heads", t.n_heads.to_string()),
            ("d_hidden", t.d_hidden.to_string()),
            ("use_spread", self.use_spread.to_string()),
            ("use_ge", self.use_ge.to_string()),
            ("use_pe", self.use_pe.to_string()),
            ("use_spread_skip", self.use_spread_skip.to_string()),
            ("bottleneck_transformer", self.bottleneck_transformer.to_string()),
        ]
    }

    /// Set one field by key. `variant` only renames; use
    /// [`ModelConfig::build_variant`] for the matching flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.transformer;
        match key {
            "variant" => self.variant = value.parse()?,
            "input_res" => self.input_res = parse_value(key, value)?,
            "output_res" => self.output_res = parse_value(key, value)?,
            "ch" => self.ch = parse_value(key, value)?,
            "channel_cap" => self.channel_cap = parse_value(key, value)?,
            "enc_stages" => self.enc_stages = parse_value(key, value)?,
            "dec_stages" => self.dec_stages = parse_value(key, value)?,
            "patch_grid" => self.patch_grid = parse_value(key, value)?,
            "d_item" => t.d_item = parse_value(key, value)?,
            "n_heads" => t.n_heads = parse_value(key, value)?,
            "d_hidden" => t.d_hidden = parse_value(key, value)?,
            "use_spread" => self.use_spread = parse_value(key, value)?,
            "use_ge" => self.use_ge = parse_value(key, value)?,
            "use_pe" => self.use_pe = parse_value(key, value)?,
            "use_spread_skip" => self.use_spread_skip = parse_value(key, value)?,
            "bottleneck_transformer" => self.bottleneck_transformer = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Stable text form, one `key = value` per line. Hashing this identifies
    /// the architecture a checkpoint belongs to.
    pub fn canonical(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Inverse of [`ModelConfig::canonical`]. Every key must be present.
    pub fn from_canonical(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let variant = pairs
            .iter()
            .find(|(k, _)| k == "variant")
            .ok_or_else(|| Error::Config("model config lacks a variant".into()))?;
        let mut cfg = Self::build_variant(variant.1.parse()?);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        let keys = cfg.entries().len();
        if pairs.len() != keys {
            return Err(Error::Config(format!("model config has {} keys, expected {keys}", pairs.len())));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse a config value, naming the key on failure.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// `key = value` lines; blank lines and `#` comments are skipped, duplicate
/// keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if out.iter().any(|(seen, _): &(String, String)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
