//! Encoder-decoder radio map predictor with spread layers, and its ablation variants.

mod config;
mod spread;

pub use config::{parse_pairs, parse_value, ModelConfig, Variant};
pub use spread::{grid_embedding, PositionSignal, SpreadLayer};

use crate::error::{dim_err, Error, Result};
use crate::nn::{kaiming, Bound, ParamId, ParamStore};
use crate::scene::InputFeatureMaps;
use crate::tensor::{Graph, RngState, Tensor, Var};

/// Index of the transmitter channel in the network input.
pub const TX_CHANNEL: usize = 2;

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn new(store: &mut ParamStore, name: &str, c_out: usize, c_in: usize, k: usize, rng: &mut RngState) -> Self {
        Self {
            w: store.add(format!("{name}.w"), kaiming(&[c_out, c_in, k, k], c_in * k * k, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[c_out])),
        }
    }

    fn transposed(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut RngState) -> Self {
        Self {
            w: store.add(format!("{name}.w"), kaiming(&[c_in, c_out, 2, 2], c_in, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[c_out])),
        }
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Conv,
    fuse: Conv,
    spread: Option<SpreadLayer>,
}

/// A model instance: configuration, parameters and layer handles.
#[derive(Clone, Debug)]
pub struct RadioNet {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    encoder: Vec<Conv>,
    bottleneck: Option<SpreadLayer>,
    decoder: Vec<DecoderStage>,
    head: Conv,
}

impl RadioNet {
    pub fn new(cfg: ModelConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut encoder = Vec::with_capacity(cfg.enc_stages);
        let mut c_prev = cfg.input_channels();
        for s in 1..=cfg.enc_stages {
            let c = cfg.stage_channels(s);
            encoder.push(Conv::new(&mut store, &format!("enc{s}.conv"), c, c_prev, 3, rng));
            c_prev = c;
        }
        let bottleneck = if cfg.bottleneck_transformer {
            let r = cfg.stage_res(cfg.enc_stages);
            Some(SpreadLayer::new(
                &mut store,
                "bottleneck",
                c_prev,
                r,
                r,
                cfg.transformer,
                PositionSignal::Learned,
                false,
                rng,
            )?)
        } else {
            None
        };
        let position = if cfg.use_ge {
            PositionSignal::Grid
        } else if cfg.use_pe {
            PositionSignal::Learned
        } else {
            PositionSignal::None
        };
        let mut decoder = Vec::with_capacity(cfg.dec_stages);
        for j in 1..=cfg.dec_stages {
            let level = cfg.enc_stages - j;
            let c = cfg.stage_channels(level);
            let up = Conv::transposed(&mut store, &format!("dec{j}.up"), c_prev, c, rng);
            let fuse = Conv::new(&mut store, &format!("dec{j}.fuse"), c, 2 * c, 3, rng);
            let spread = if cfg.use_spread {
                Some(SpreadLayer::new(
                    &mut store,
                    &format!("dec{j}.spread"),
                    c,
                    cfg.stage_res(level),
                    cfg.patch_grid,
                    cfg.transformer,
                    position,
                    cfg.use_spread_skip,
                    rng,
                )?)
            } else {
                None
            };
            decoder.push(DecoderStage { up, fuse, spread });
            c_prev = c;
        }
        let head = Conv::new(&mut store, "head", 1, c_prev, 1, rng);
        Ok(Self {
            cfg,
            params: store,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    /// Feature pyramid, one entry per encoder stage (finest first).
    pub fn encoder_forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let s = g.shape(x).to_vec();
        let (c, r) = (self.cfg.input_channels(), self.cfg.input_res);
        if s.len() != 4 || s[1] != c || s[2] != r || s[3] != r {
            return dim_err("encoder", format!("expected [B, {c}, {r}, {r}], got {s:?}"));
        }
        let mut h = x;
        let mut pyramid = Vec::with_capacity(self.encoder.len());
        for conv in &self.encoder {
            let y = g.conv2d(h, p.var(conv.w), Some(p.var(conv.b)), 1, 1)?;
            let y = g.relu(y);
            h = g.maxpool2d(y, 2, 2)?;
            pyramid.push(h);
        }
        Ok(pyramid)
    }

    /// Grid embedding inputs of every spread layer for `tx_norm`, decoder
    /// order. Empty for variants without grid embedding.
    pub fn grid_coordinates(&self, tx_norm: &[(f64, f64)]) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for layer in self.bottleneck.iter().chain(self.decoder.iter().filter_map(|d| d.spread.as_ref())) {
            out.extend(layer.coordinates(tx_norm)?);
        }
        Ok(out)
    }

    /// Upsample from the bottleneck and predict the normalized map `[B, 1, out, out]`.
    pub fn decoder_forward(&self, g: &mut Graph, p: &Bound, pyramid: &[Var], tx_norm: &[(f64, f64)]) -> Result<Var> {
        if pyramid.len() != self.cfg.enc_stages {
            return Err(Error::Contract(format!(
                "pyramid has {} levels, model expects {}",
                pyramid.len(),
                self.cfg.enc_stages
            )));
        }
        let mut h = pyramid[pyramid.len() - 1];
        if let Some(t) = &self.bottleneck {
            h = t.forward(g, p, h, tx_norm)?;
        }
        for (j, stage) in self.decoder.iter().enumerate() {
            let lateral = pyramid[self.cfg.enc_stages - j - 2];
            let up = g.conv_transpose2d(h, p.var(stage.up.w), Some(p.var(stage.up.b)), 2, 0)?;
            let cat = g.concat(&[up, lateral], 1)?;
            let y = g.conv2d(cat, p.var(stage.fuse.w), Some(p.var(stage.fuse.b)), 1, 1)?;
            h = g.relu(y);
            if let Some(spread) = &stage.spread {
                h = spread.forward(g, p, h, tx_norm)?;
            }
        }
        let y = g.conv2d(h, p.var(self.head.w), Some(p.var(self.head.b)), 1, 0)?;
        Ok(g.sigmoid(y))
    }

    /// Full forward pass on an input batch already on the tape.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let tx = tx_locations(&g.tensor(x))?;
        let pyramid = self.encoder_forward(g, p, x)?;
        self.decoder_forward(g, p, &pyramid, &tx)
    }

    /// Inference without gradients. `input` is `[B, C, H, W]`.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.tensor(y))
    }

    /// Stack rasterized scenes into the `[B, C, H, W]` input this model expects.
    pub fn input_batch(&self, maps: &[&InputFeatureMaps]) -> Result<Tensor> {
        input_batch(maps, self.cfg.input_channels())
    }
}

/// Stack the first `channels` feature channels of each map.
pub fn input_batch(maps: &[&InputFeatureMaps], channels: usize) -> Result<Tensor> {
    let Some(first) = maps.first() else {
        return Err(Error::Contract("empty input batch".into()));
    };
    let (h, w) = (first.h, first.w);
    let mut data = Vec::with_capacity(maps.len() * channels * h * w);
    for m in maps {
        if (m.h, m.w) != (h, w) {
            return dim_err("input batch", "feature maps differ in resolution");
        }
        for k in 0..channels {
            data.extend_from_slice(m.channel(k));
        }
    }
    Tensor::new(&[maps.len(), channels, h, w], data)
}

/// Normalized transmitter position `((j + 0.5) / W, (i + 0.5) / H)` of each
/// batch item, read from the brightest pixel of the transmitter channel.
pub fn tx_locations(x: &Tensor) -> Result<Vec<(f64, f64)>> {
    let s = x.shape();
    if s.len() != 4 || s[1] <= TX_CHANNEL {
        return dim_err("tx_locations", format!("input shape {s:?} lacks a transmitter channel"));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    Ok((0..b)
        .map(|n| {
            let start = (n * c + TX_CHANNEL) * plane;
            let tx = &x.data()[start..start + plane];
            let k = (0..plane).fold(0, |best, k| if tx[k] > tx[best] { k } else { best });
            (((k % w) as f64 + 0.5) / w as f64, ((k / w) as f64 + 0.5) / h as f64)
        })
        .collect())
}
