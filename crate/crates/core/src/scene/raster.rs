use super::{SceneSpec, FREQ_GHZ, HEIGHT_NORMALIZER_M, TREE_CANOPY_RADIUS_M};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::tensor::Tensor;

/// Channel order of [`InputFeatureMaps::to_tensor`].
pub const FEATURE_CHANNELS: [&str; 6] = ["building", "tree", "tx", "freq", "grid_x", "grid_y"];

pub fn normalize_height(h_m: f64) -> f32 {
    (h_m / HEIGHT_NORMALIZER_M) as f32
}

/// Per-cell network inputs, each `h * w` row-major and within `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputFeatureMaps {
    pub h: usize,
    pub w: usize,
    pub world_size_m: f64,
    pub building: Vec<f32>,
    pub tree: Vec<f32>,
    pub tx: Vec<f32>,
    pub freq: Vec<f32>,
    pub grid_x: Vec<f32>,
    pub grid_y: Vec<f32>,
}

impl InputFeatureMaps {
    /// World position of the center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        cell_center(self.world_size_m, self.h, self.w, i, j)
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        match k {
            0 => &self.building,
            1 => &self.tree,
            2 => &self.tx,
            3 => &self.freq,
            4 => &self.grid_x,
            5 => &self.grid_y,
            _ => panic!("feature channel {k} out of range"),
        }
    }

    /// Stacked `[6, h, w]` tensor in [`FEATURE_CHANNELS`] order.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(6 * self.h * self.w);
        for k in 0..FEATURE_CHANNELS.len() {
            data.extend_from_slice(self.channel(k));
        }
        Tensor::new(&[6, self.h, self.w], data).expect("consistent feature map sizes")
    }

    /// `(i, j)` of the transmitter pixel.
    pub fn tx_cell(&self) -> (usize, usize) {
        let k = self
            .tx
            .iter()
            .position(|&v| v != 0.0)
            .expect("tx map has one nonzero pixel");
        (k / self.w, k % self.w)
    }
}

fn cell_center(world: f64, h: usize, w: usize, i: usize, j: usize) -> Vec2 {
    Vec2::new((j as f64 + 0.5) * world / w as f64, (i as f64 + 0.5) * world / h as f64)
}

/// Cell index range whose centers may fall in `[lo, hi]` along one axis.
fn cell_span(lo: f64, hi: f64, world: f64, n: usize) -> std::ops::Range<usize> {
    let cs = world / n as f64;
    let a = ((lo / cs - 0.5).floor().max(0.0)) as usize;
    let b = ((hi / cs - 0.5).ceil() + 1.0).clamp(0.0, n as f64) as usize;
    a.min(n)..b
}

/// Sample every object at cell centers and normalize to `[0, 1]`.
pub fn rasterize_scene(scene: &SceneSpec, h: usize, w: usize) -> Result<InputFeatureMaps> {
    if h < 8 || w < 8 {
        return Err(Error::Contract(format!("raster resolution {h}x{w} below 8x8")));
    }
    let world = scene.world_size_m;
    let txp = scene.tx.position();
    if !scene.in_world(txp) {
        return Err(Error::Contract(format!(
            "tx at ({}, {}) outside the {world} m world",
            txp.x, txp.y
        )));
    }
    let n = h * w;
    let mut building = vec![0.0f32; n];
    let mut tree = vec![0.0f32; n];
    let mut bh = vec![f64::NEG_INFINITY; n];
    let mut th = vec![f64::NEG_INFINITY; n];
    for b in &scene.buildings {
        let bb = b.bbox();
        for i in cell_span(bb.min.y, bb.max.y, world, h) {
            for j in cell_span(bb.min.x, bb.max.x, world, w) {
                let k = i * w + j;
                if b.height_m > bh[k] && b.contains(cell_center(world, h, w, i, j)) {
                    bh[k] = b.height_m;
                }
            }
        }
    }
    let r = TREE_CANOPY_RADIUS_M;
    for t in &scene.trees {
        let c = t.position();
        for i in cell_span(c.y - r, c.y + r, world, h) {
            for j in cell_span(c.x - r, c.x + r, world, w) {
                let k = i * w + j;
                if t.height_m > th[k] && (c - cell_center(world, h, w, i, j)).norm() <= r {
                    th[k] = t.height_m;
                }
            }
        }
    }
    for k in 0..n {
        if bh[k].is_finite() {
            building[k] = normalize_height(bh[k]);
        }
        if th[k].is_finite() {
            tree[k] = normalize_height(th[k]);
        }
    }
    let mut tx = vec![0.0f32; n];
    let ti = ((txp.y / world * h as f64) as usize).min(h - 1);
    let tj = ((txp.x / world * w as f64) as usize).min(w - 1);
    tx[ti * w + tj] = normalize_height(scene.tx.height_m);
    let f = ((scene.freq_ghz - FREQ_GHZ.0) / (FREQ_GHZ.1 - FREQ_GHZ.0)).clamp(0.0, 1.0) as f32;
    let freq = vec![f; n];
    let mut grid_x = vec![0.0f32; n];
    let mut grid_y = vec![0.0f32; n];
    for i in 0..h {
        for j in 0..w {
            grid_x[i * w + j] = j as f32 / (w - 1) as f32;
            grid_y[i * w + j] = i as f32 / (h - 1) as f32;
        }
    }
    Ok(InputFeatureMaps {
        h,
        w,
        world_size_m: world,
        building,
        tree,
        tx,
        freq,
        grid_x,
        grid_y,
    })
}
