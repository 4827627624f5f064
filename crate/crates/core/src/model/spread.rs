use crate::error::{dim_err, Result};
use crate::nn::{xavier, Bound, ParamId, ParamStore, TransformerConfig, TransformerLayer};
use crate::tensor::{Graph, RngState, Tensor, Var};

/// Fixed per-patch coordinates `[xc, yc, xc - tx_x, yc - ty_y]` for a
/// `grid x grid` patch array over the unit square, patches in row-major order.
pub fn grid_embedding(grid: usize, tx_norm: (f64, f64)) -> Tensor {
    let mut data = Vec::with_capacity(grid * grid * 4);
    for gy in 0..grid {
        for gx in 0..grid {
            let xc = (gx as f64 + 0.5) / grid as f64;
            let yc = (gy as f64 + 0.5) / grid as f64;
            data.extend([xc, yc, xc - tx_norm.0, yc - tx_norm.1].map(|v| v as f32));
        }
    }
    Tensor::new(&[grid * grid, 4], data).expect("grid embedding shape")
}

/// Positional signal added to patch embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionSignal {
    None,
    Grid,
    Learned,
}

/// Patchify, embed, transform, project back, reassemble.
#[derive(Clone, Debug)]
pub struct SpreadLayer {
    pub grid: usize,
    pub channels: usize,
    pub res: usize,
    pub skip: bool,
    pub position: PositionSignal,
    pub proj_in: (ParamId, ParamId),
    pub proj_out: (ParamId, ParamId),
    pub ge_proj: Option<(ParamId, ParamId)>,
    pub pe_table: Option<ParamId>,
    pub transformer: TransformerLayer,
}

impl SpreadLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        res: usize,
        grid: usize,
        cfg: TransformerConfig,
        position: PositionSignal,
        skip: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        if grid == 0 || res % grid != 0 {
            return dim_err("spread layer", format!("patch grid {grid} does not divide {res}"));
        }
        let p = res / grid;
        let feat = channels * p * p;
        let d = cfg.d_item;
        let proj_in = (
            store.add(format!("{prefix}.proj_in.w"), xavier(feat, d, rng)),
            store.add(format!("{prefix}.proj_in.b"), Tensor::zeros(&[d])),
        );
        let ge_proj = (position == PositionSignal::Grid).then(|| {
            (
                store.add(format!("{prefix}.ge.w"), xavier(4, d, rng)),
                store.add(format!("{prefix}.ge.b"), Tensor::zeros(&[d])),
            )
        });
        let pe_table = (position == PositionSignal::Learned)
            .then(|| store.add(format!("{prefix}.pe"), Tensor::randn(&[grid * grid, d], 0.02, rng)));
        let transformer = TransformerLayer::new(store, &format!("{prefix}.transformer"), cfg, rng)?;
        let proj_out = (
            store.add(format!("{prefix}.proj_out.w"), xavier(d, feat, rng)),
            store.add(format!("{prefix}.proj_out.b"), Tensor::zeros(&[feat])),
        );
        Ok(Self {
            grid,
            channels,
            res,
            skip,
            position,
            proj_in,
            proj_out,
            ge_proj,
            pe_table,
            transformer,
        })
    }

    /// Grid embedding input `[B, grid², 4]` for the batch, or `None` when the
    /// layer does not use one. Computed from `tx_norm` alone, never learned.
    pub fn coordinates(&self, tx_norm: &[(f64, f64)]) -> Result<Option<Tensor>> {
        if self.ge_proj.is_none() {
            return Ok(None);
        }
        let n_patch = self.grid * self.grid;
        let mut coords = Vec::with_capacity(tx_norm.len() * n_patch * 4);
        for &t in tx_norm {
            coords.extend_from_slice(grid_embedding(self.grid, t).data());
        }
        Ok(Some(Tensor::new(&[tx_norm.len(), n_patch, 4], coords)?))
    }

    /// `x` is `[B, C, res, res]`; `tx_norm` has one entry per batch item.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, tx_norm: &[(f64, f64)]) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.res || s[3] != self.res {
            return dim_err(
                "spread layer",
                format!("expected [B, {}, {r}, {r}], got {s:?}", self.channels, r = self.res),
            );
        }
        let b = s[0];
        if tx_norm.len() != b {
            return dim_err("spread layer", format!("{} tx locations for batch {b}", tx_norm.len()));
        }
        let n_patch = self.grid * self.grid;
        let d = self.transformer.cfg.d_item;
        let tokens = g.patchify(x, self.grid)?;
        let mut z = g.linear(tokens, p.var(self.proj_in.0), Some(p.var(self.proj_in.1)))?;
        if let (Some((w, bias)), Some(coords)) = (self.ge_proj, self.coordinates(tx_norm)?) {
            let coords = g.constant(coords);
            let ge = g.linear(coords, p.var(w), Some(p.var(bias)))?;
            z = g.add(z, ge)?;
        }
        if let Some(pe) = self.pe_table {
            let flat = g.reshape(z, &[b, n_patch * d])?;
            let table = g.reshape(p.var(pe), &[n_patch * d])?;
            let sum = g.add_broadcast(flat, table, 1)?;
            z = g.reshape(sum, &[b, n_patch, d])?;
        }
        let z = self.transformer.forward(g, p, z)?;
        let out = g.linear(z, p.var(self.proj_out.0), Some(p.var(self.proj_out.1)))?;
        let y = g.unpatchify(out, self.grid, self.channels, self.res, self.res)?;
        if self.skip {
            g.add(y, x)
        } else {
            Ok(y)
        }
    }
}
