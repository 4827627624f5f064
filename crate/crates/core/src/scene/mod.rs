//! Randomized urban scenes and their rasterization into network inputs.
//!
//! World coordinates are meters with the origin at the top-left corner,
//! `x` growing with the column index and `y` with the row index.

mod raster;

pub use raster::{normalize_height, rasterize_scene, InputFeatureMaps, FEATURE_CHANNELS};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, segments_cross, Aabb, Vec2};
use crate::tensor::RngState;
use serde::{Deserialize, Serialize};

pub const BUILDING_HEIGHT_M: (f64, f64) = (30.0, 70.0);
pub const TREE_HEIGHT_M: (f64, f64) = (10.0, 50.0);
pub const TX_HEIGHT_M: (f64, f64) = (20.0, 80.0);
pub const FREQ_GHZ: (f64, f64) = (5.735, 5.825);
/// Divisor that maps every height in a scene into `[0, 1]`.
pub const HEIGHT_NORMALIZER_M: f64 = 100.0;
pub const TREE_CANOPY_RADIUS_M: f64 = 3.0;
pub const DEFAULT_WORLD_SIZE_M: f64 = 512.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Rectangular,
    L,
    T,
    H,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [Self::Rectangular, Self::L, Self::T, Self::H];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub shape: ShapeFamily,
    pub height_m: f64,
    pub footprint_m: Vec<Vec2>,
}

impl Building {
    pub fn bbox(&self) -> Aabb {
        Aabb::of_points(&self.footprint_m)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.bbox().contains(p) && point_in_polygon(p, &self.footprint_m)
    }

    /// Wall segments in footprint order.
    pub fn walls(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.footprint_m.len();
        (0..n).map(move |i| (self.footprint_m[i], self.footprint_m[(i + 1) % n]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub x_m: f64,
    pub y_m: f64,
    pub height_m: f64,
}

impl Tree {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x_m, self.y_m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub x_m: f64,
    pub y_m: f64,
    pub height_m: f64,
}

impl Transmitter {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x_m, self.y_m)
    }
}

/// Vector description of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub world_size_m: f64,
    pub freq_ghz: f64,
    pub tx: Transmitter,
    #[serde(default)]
    pub buildings: Vec<Building>,
    #[serde(default)]
    pub trees: Vec<Tree>,
}

impl SceneSpec {
    /// Scene with no obstacles.
    pub fn empty(world_size_m: f64, tx: Transmitter, freq_ghz: f64) -> Self {
        Self {
            world_size_m,
            freq_ghz,
            tx,
            buildings: Vec::new(),
            trees: Vec::new(),
        }
    }

    /// Height of the tallest building whose footprint contains `p`.
    pub fn building_height_at(&self, p: Vec2) -> Option<f64> {
        self.buildings
            .iter()
            .filter(|b| b.contains(p))
            .map(|b| b.height_m)
            .reduce(f64::max)
    }

    /// Height of the tallest tree whose canopy disk contains `p`.
    pub fn tree_height_at(&self, p: Vec2) -> Option<f64> {
        self.trees
            .iter()
            .filter(|t| (t.position() - p).norm() <= TREE_CANOPY_RADIUS_M)
            .map(|t| t.height_m)
            .reduce(f64::max)
    }

    pub fn in_world(&self, p: Vec2) -> bool {
        (0.0..=self.world_size_m).contains(&p.x) && (0.0..=self.world_size_m).contains(&p.y)
    }

    /// Check every range and placement invariant.
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !(self.world_size_m.is_finite() && self.world_size_m > 0.0) {
            return Err(Error::Contract(format!("world size {} must be positive", self.world_size_m)));
        }
        if !in_range(self.freq_ghz, FREQ_GHZ) {
            return Err(Error::Contract(format!("frequency {} GHz outside {FREQ_GHZ:?}", self.freq_ghz)));
        }
        if !in_range(self.tx.height_m, TX_HEIGHT_M) {
            return Err(Error::Contract(format!("tx height {} m outside {TX_HEIGHT_M:?}", self.tx.height_m)));
        }
        if !self.in_world(self.tx.position()) {
            return Err(Error::Contract("tx outside world bounds".into()));
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if !in_range(b.height_m, BUILDING_HEIGHT_M) {
                return Err(Error::Contract(format!("building {i} height {} m outside {BUILDING_HEIGHT_M:?}", b.height_m)));
            }
            if b.footprint_m.len() < 3 {
                return Err(Error::Contract(format!("building {i} footprint has fewer than 3 vertices")));
            }
            if b.contains(self.tx.position()) {
                return Err(Error::Contract(format!("tx inside building {i}")));
            }
        }
        for (i, t) in self.trees.iter().enumerate() {
            if !in_range(t.height_m, TREE_HEIGHT_M) {
                return Err(Error::Contract(format!("tree {i} height {} m outside {TREE_HEIGHT_M:?}", t.height_m)));
            }
        }
        for i in 0..self.buildings.len() {
            for j in i + 1..self.buildings.len() {
                if footprints_overlap(&self.buildings[i], &self.buildings[j]) {
                    return Err(Error::Contract(format!("buildings {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parse and validate a scene file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: SceneSpec = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }
}

fn footprints_overlap(a: &Building, b: &Building) -> bool {
    if !a.bbox().overlaps(&b.bbox(), 0.0) {
        return false;
    }
    for (p1, p2) in a.walls() {
        for (q1, q2) in b.walls() {
            if segments_cross(p1, p2, q1, q2) {
                return true;
            }
        }
    }
    if a.footprint_m.iter().any(|p| b.contains(*p) && !on_boundary(*p, b))
        || b.footprint_m.iter().any(|p| a.contains(*p) && !on_boundary(*p, a))
    {
        return true;
    }
    // Remaining case: boundaries touch without crossing. Probe the centers of
    // the cells formed by all vertex coordinates, which is exact for
    // axis-aligned footprints.
    let mut xs: Vec<f64> = a.footprint_m.iter().chain(&b.footprint_m).map(|p| p.x).collect();
    let mut ys: Vec<f64> = a.footprint_m.iter().chain(&b.footprint_m).map(|p| p.y).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    xs.windows(2).any(|wx| {
        ys.windows(2).any(|wy| {
            let c = Vec2::new(0.5 * (wx[0] + wx[1]), 0.5 * (wy[0] + wy[1]));
            a.contains(c) && b.contains(c)
        })
    })
}

fn on_boundary(p: Vec2, b: &Building) -> bool {
    b.walls().any(|(s, e)| {
        let d = e - s;
        let t = ((p - s).dot(d) / d.dot(d)).clamp(0.0, 1.0);
        (s + d * t - p).norm() < 1e-9
    })
}

/// Bounds for [`generate_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub world_size_m: f64,
    pub building_count: usize,
    pub road_width_m: f64,
    pub block_min_m: f64,
    pub block_max_m: f64,
    /// Minimum building side.
    pub lot_min_m: f64,
    /// Maximum building side.
    pub lot_max_m: f64,
    /// Clear gap kept between building bounding boxes.
    pub building_gap_m: f64,
    pub tree_spacing_m: f64,
    pub tree_jitter_m: f64,
    /// Offset of tree rows from the corridor edge, inward.
    pub tree_setback_m: f64,
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            world_size_m: DEFAULT_WORLD_SIZE_M,
            building_count: 24,
            road_width_m: 16.0,
            block_min_m: 60.0,
            block_max_m: 120.0,
            lot_min_m: 16.0,
            lot_max_m: 48.0,
            building_gap_m: 4.0,
            tree_spacing_m: 10.0,
            tree_jitter_m: 3.0,
            tree_setback_m: 2.0,
            max_retries: 200,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("world_size_m", self.world_size_m),
            ("road_width_m", self.road_width_m),
            ("block_min_m", self.block_min_m),
            ("lot_min_m", self.lot_min_m),
            ("tree_spacing_m", self.tree_spacing_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("scene.{name} must be positive, got {v}")));
            }
        }
        if self.block_max_m < self.block_min_m || self.lot_max_m < self.lot_min_m {
            return Err(Error::Config("scene ranges must satisfy min <= max".into()));
        }
        if self.tree_jitter_m < 0.0 || self.tree_jitter_m >= self.tree_spacing_m {
            return Err(Error::Config("scene.tree_jitter_m must lie in [0, tree_spacing_m)".into()));
        }
        if self.tree_setback_m < 0.0 || 2.0 * self.tree_setback_m > self.road_width_m {
            return Err(Error::Config("scene.tree_setback_m must fit inside the road".into()));
        }
        Ok(())
    }
}

/// Split `[0, size)` into alternating blocks and road corridors.
/// Returns `(blocks, roads)` as half-open intervals.
fn corridor_layout(rng: &mut RngState, p: &SceneParams) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let mut blocks = Vec::new();
    let mut roads = Vec::new();
    let mut x = 0.0;
    loop {
        let w = rng.uniform_in(p.block_min_m, p.block_max_m);
        let remaining = p.world_size_m - x;
        if remaining - w < p.road_width_m + 0.5 * p.block_min_m {
            blocks.push((x, p.world_size_m));
            break;
        }
        blocks.push((x, x + w));
        roads.push((x + w, x + w + p.road_width_m));
        x += w + p.road_width_m;
    }
    (blocks, roads)
}

fn footprint(family: ShapeFamily, min: Vec2, w: f64, h: f64, rng: &mut RngState) -> Vec<Vec2> {
    let (x0, y0, x1, y1) = (min.x, min.y, min.x + w, min.y + h);
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let v = Vec2::new;
    let mut pts = match family {
        ShapeFamily::Rectangular => vec![v(x0, y0), v(x1, y0), v(x1, y1), v(x0, y1)],
        ShapeFamily::L => {
            let tx = w * rng.uniform_in(0.35, 0.6);
            let ty = h * rng.uniform_in(0.35, 0.6);
            vec![v(x0, y0), v(x0 + tx, y0), v(x0 + tx, y1 - ty), v(x1, y1 - ty), v(x1, y1), v(x0, y1)]
        }
        ShapeFamily::T => {
            let tx = w * rng.uniform_in(0.3, 0.5);
            let ty = h * rng.uniform_in(0.3, 0.5);
            vec![
                v(x0, y0),
                v(x1, y0),
                v(x1, y0 + ty),
                v(cx + 0.5 * tx, y0 + ty),
                v(cx + 0.5 * tx, y1),
                v(cx - 0.5 * tx, y1),
                v(cx - 0.5 * tx, y0 + ty),
                v(x0, y0 + ty),
            ]
        }
        ShapeFamily::H => {
            let tx = w * rng.uniform_in(0.2, 0.35);
            let ty = h * rng.uniform_in(0.2, 0.4);
            vec![
                v(x0, y0),
                v(x0 + tx, y0),
                v(x0 + tx, cy - 0.5 * ty),
                v(x1 - tx, cy - 0.5 * ty),
                v(x1 - tx, y0),
                v(x1, y0),
                v(x1, y1),
                v(x1 - tx, y1),
                v(x1 - tx, cy + 0.5 * ty),
                v(x0 + tx, cy + 0.5 * ty),
                v(x0 + tx, y1),
                v(x0, y1),
            ]
        }
    };
    // Random orientation: mirror about the box center and optionally rotate a quarter turn.
    let flip_x = rng.uniform() < 0.5;
    let flip_y = rng.uniform() < 0.5;
    let turn = rng.uniform() < 0.5 && (w - h).abs() < 1e-9;
    for p in &mut pts {
        if flip_x {
            p.x = x0 + x1 - p.x;
        }
        if flip_y {
            p.y = y0 + y1 - p.y;
        }
        if turn {
            let (dx, dy) = (p.x - cx, p.y - cy);
            *p = v(cx - dy, cy + dx);
        }
    }
    pts
}

/// Sample a random scene. A pure function of the generator state and `params`.
pub fn generate_scene(rng: &mut RngState, params: &SceneParams) -> Result<SceneSpec> {
    params.validate()?;
    let size = params.world_size_m;
    let (xblocks, xroads) = corridor_layout(rng, params);
    let (yblocks, yroads) = corridor_layout(rng, params);

    let margin = 0.5 * params.building_gap_m;
    let mut buildings: Vec<Building> = Vec::with_capacity(params.building_count);
    let mut boxes: Vec<Aabb> = Vec::with_capacity(params.building_count);
    for k in 0..params.building_count {
        let mut placed = false;
        for _ in 0..params.max_retries.max(1) {
            let (bx0, bx1) = xblocks[rng.index_in(0, xblocks.len())];
            let (by0, by1) = yblocks[rng.index_in(0, yblocks.len())];
            let (room_x, room_y) = (bx1 - bx0 - 2.0 * margin, by1 - by0 - 2.0 * margin);
            if room_x < params.lot_min_m || room_y < params.lot_min_m {
                continue;
            }
            let w = rng.uniform_in(params.lot_min_m, params.lot_max_m.min(room_x));
            let h = rng.uniform_in(params.lot_min_m, params.lot_max_m.min(room_y));
            let min = Vec2::new(
                rng.uniform_in(bx0 + margin, bx1 - margin - w),
                rng.uniform_in(by0 + margin, by1 - margin - h),
            );
            let family = ShapeFamily::ALL[rng.index_in(0, ShapeFamily::ALL.len())];
            let pts = footprint(family, min, w, h, rng);
            let bb = Aabb::of_points(&pts);
            if boxes.iter().any(|o| o.overlaps(&bb, params.building_gap_m)) {
                continue;
            }
            let height_m = rng.uniform_in(BUILDING_HEIGHT_M.0, BUILDING_HEIGHT_M.1);
            boxes.push(bb);
            buildings.push(Building {
                shape: family,
                height_m,
                footprint_m: pts,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "placed only {k} of {} buildings after {} retries",
                params.building_count, params.max_retries
            )));
        }
    }

    let mut trees = Vec::new();
    let mut row = |rng: &mut RngState, fixed: f64, vertical: bool| {
        let mut s = rng.uniform_in(0.0, params.tree_spacing_m);
        while s < size {
            let (x_m, y_m) = if vertical { (fixed, s) } else { (s, fixed) };
            let height_m = rng.uniform_in(TREE_HEIGHT_M.0, TREE_HEIGHT_M.1);
            trees.push(Tree { x_m, y_m, height_m });
            s += params.tree_spacing_m + rng.uniform_in(-params.tree_jitter_m, params.tree_jitter_m);
        }
    };
    for &(r0, r1) in &xroads {
        row(rng, r0 + params.tree_setback_m, true);
        row(rng, r1 - params.tree_setback_m, true);
    }
    for &(r0, r1) in &yroads {
        row(rng, r0 + params.tree_setback_m, false);
        row(rng, r1 - params.tree_setback_m, false);
    }

    let mut tx = None;
    for _ in 0..params.max_retries.max(1) * 10 {
        let p = Vec2::new(rng.uniform_in(0.0, size), rng.uniform_in(0.0, size));
        if !buildings.iter().any(|b| b.contains(p)) {
            tx = Some(p);
            break;
        }
    }
    let tx = tx.ok_or_else(|| Error::Generation("no free location for the transmitter".into()))?;
    let tx = Transmitter {
        x_m: tx.x,
        y_m: tx.y,
        height_m: rng.uniform_in(TX_HEIGHT_M.0, TX_HEIGHT_M.1),
    };
    let freq_ghz = rng.uniform_in(FREQ_GHZ.0, FREQ_GHZ.1);
    Ok(SceneSpec {
        world_size_m: size,
        freq_ghz,
        tx,
        buildings,
        trees,
    })
}

/// Deterministic seeded shuffle of `0..n`, split as `train : val` by `ratio`.
/// Both parts are non-empty.
pub fn split_dataset(n: usize, ratio: (u32, u32), seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!("split_dataset needs n >= 2, got {n}")));
    }
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Contract("split ratio parts must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut idx);
    let total = ratio.0 as u64 + ratio.1 as u64;
    let n_val = ((n as u64 * ratio.1 as u64 + total / 2) / total).clamp(1, n as u64 - 1) as usize;
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}
