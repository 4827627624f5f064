//! Simplified 2.5-D ray-launching propagation model used as ground truth.
//!
//! Rays leave the transmitter uniformly in azimuth and follow straight
//! segments with specular wall reflections. Each ray is a 3-D line that
//! descends linearly from the transmitter height to the receiver height over
//! the unfolded distance to the receiver, so whether a wall blocks it depends
//! on where the receiver is. A path therefore carries the interval of
//! receiver distances for which it is still physically valid.
//!
//! A cell captured by several neighbouring rays of the same path family is
//! credited once in total: each ray adds `1/count` of the path power, where
//! `count` is the number of launch directions whose ray passes within the
//! capture radius of the cell center.

mod accel;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scene::{SceneSpec, FREQ_GHZ};
use crate::tensor::Tensor;
use accel::{Crossing, TreeGrid, WallSet};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const RX_HEIGHT_M: f64 = 1.5;
pub const POWER_MIN_DB: f64 = -250.0;
pub const POWER_MAX_DB: f64 = -70.0;
/// Free-space distance at which the received power equals [`POWER_MAX_DB`].
pub const REFERENCE_DISTANCE_M: f64 = 10.0;
/// Shortest distance used in the path-loss formula.
const MIN_DISTANCE_M: f64 = 1.0;
/// Tree height at which the foliage loss rate applies unscaled.
const FOLIAGE_REFERENCE_HEIGHT_M: f64 = 50.0;

/// Free-space path loss in dB for distance `d_m` meters and frequency `f_ghz`.
pub fn fspl(d_m: f64, f_ghz: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(f_ghz > 0.0) {
        return Err(Error::Domain(format!("fspl needs d > 0 and f > 0, got d = {d_m} m, f = {f_ghz} GHz")));
    }
    Ok(fspl_unchecked(d_m, f_ghz))
}

fn fspl_unchecked(d_m: f64, f_ghz: f64) -> f64 {
    20.0 * (d_m / 1000.0).log10() + 20.0 * (f_ghz * 1000.0).log10() + 32.45
}

/// Transmit power in dB: a free-space receiver at [`REFERENCE_DISTANCE_M`]
/// reads [`POWER_MAX_DB`] at the bottom of the band.
pub fn tx_power_db() -> f64 {
    POWER_MAX_DB + fspl_unchecked(REFERENCE_DISTANCE_M, FREQ_GHZ.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub n_rays: usize,
    pub max_bounces: usize,
    pub reflection_loss_db: f64,
    pub tree_loss_db_per_m: f64,
    pub rx_height_m: f64,
    pub power_min_db: f64,
    pub power_max_db: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_rays: 3600,
            max_bounces: 2,
            reflection_loss_db: 6.0,
            tree_loss_db_per_m: 0.5,
            rx_height_m: RX_HEIGHT_M,
            power_min_db: POWER_MIN_DB,
            power_max_db: POWER_MAX_DB,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rays < 360 {
            return Err(Error::Config(format!("oracle.n_rays must be >= 360, got {}", self.n_rays)));
        }
        if self.max_bounces > 5 {
            return Err(Error::Config(format!("oracle.max_bounces must be <= 5, got {}", self.max_bounces)));
        }
        if self.reflection_loss_db < 0.0 || self.tree_loss_db_per_m < 0.0 {
            return Err(Error::Config("oracle losses must be non-negative".into()));
        }
        if !(self.rx_height_m >= 0.0) {
            return Err(Error::Config("oracle.rx_height_m must be non-negative".into()));
        }
        if !(self.power_min_db < self.power_max_db) {
            return Err(Error::Config("oracle.power_min_db must be below power_max_db".into()));
        }
        Ok(())
    }
}

/// Received power per cell, plus its `[0, 1]` normalized form.
#[derive(Clone, Debug, PartialEq)]
pub struct RadioMap {
    pub h: usize,
    pub w: usize,
    pub power_min_db: f64,
    pub power_max_db: f64,
    pub power_db: Vec<f32>,
    pub normalized: Vec<f32>,
}

impl RadioMap {
    /// Clamp `power_db` to the bounds and derive the normalized grid.
    pub fn from_power_db(h: usize, w: usize, power_db: Vec<f32>, min_db: f64, max_db: f64) -> Result<Self> {
        if power_db.len() != h * w {
            return Err(Error::Contract(format!("radio map needs {} cells, got {}", h * w, power_db.len())));
        }
        let power_db: Vec<f32> = power_db.into_iter().map(|p| (p as f64).clamp(min_db, max_db) as f32).collect();
        let normalized = power_db.iter().map(|&p| normalize_db(p, min_db, max_db)).collect();
        Ok(Self {
            h,
            w,
            power_min_db: min_db,
            power_max_db: max_db,
            power_db,
            normalized,
        })
    }

    /// Inverse of the normalization, for network outputs.
    pub fn from_normalized(h: usize, w: usize, normalized: &[f32], min_db: f64, max_db: f64) -> Result<Self> {
        let power = normalized
            .iter()
            .map(|&v| (min_db + v.clamp(0.0, 1.0) as f64 * (max_db - min_db)) as f32)
            .collect();
        Self::from_power_db(h, w, power, min_db, max_db)
    }

    pub fn at_db(&self, i: usize, j: usize) -> f32 {
        self.power_db[i * self.w + j]
    }

    /// `[1, h, w]` tensor of normalized values.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.h, self.w], self.normalized.clone()).expect("consistent radio map size")
    }
}

pub fn normalize_db(p_db: f32, min_db: f64, max_db: f64) -> f32 {
    ((p_db as f64 - min_db) / (max_db - min_db)) as f32
}

/// Linear height profile of a ray: it starts at `h_start_m` at unfolded
/// distance zero and reaches `h_end_m` at `path_len_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightProfile {
    pub h_start_m: f64,
    pub h_end_m: f64,
    pub path_len_m: f64,
    /// Unfolded distance already travelled at the ray origin.
    pub s0_m: f64,
}

impl HeightProfile {
    pub fn height_at(&self, s_m: f64) -> f64 {
        self.h_start_m - (self.h_start_m - self.h_end_m) * s_m / self.path_len_m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub building: usize,
    pub distance_m: f64,
    pub point: Vec2,
    pub wall_start: Vec2,
    pub wall_end: Vec2,
}

/// First wall along `origin + t dir` taller than the ray at the crossing.
pub fn ray_cast(scene: &SceneSpec, origin: Vec2, dir: Vec2, profile: &HeightProfile) -> Option<RayHit> {
    let walls = WallSet::new(scene);
    let mut xs = Vec::new();
    walls.crossings(origin, dir, f64::INFINITY, None, &mut xs);
    xs.iter()
        .find(|c| c.height > profile.height_at(profile.s0_m + c.t))
        .map(|c| {
            let w = &walls.walls[c.wall];
            RayHit {
                building: w.building,
                distance_m: c.t,
                point: origin + dir * c.t,
                wall_start: w.a,
                wall_end: w.b,
            }
        })
}

/// One straight piece of a ray path.
#[derive(Clone, Copy, Debug)]
struct Branch {
    /// Image of the transmitter for this piece.
    source: Vec2,
    origin: Vec2,
    dir: Vec2,
    /// Unfolded distance at `origin`.
    s0: f64,
    /// Launch angle maps to the current direction as `sigma * theta + phase`.
    sigma: f64,
    phase: f64,
    /// Valid receiver distances `[lo, hi)`.
    lo: f64,
    hi: f64,
    bounces_left: usize,
    loss_db: f64,
    skip_wall: Option<usize>,
}

struct Tracer<'a> {
    cfg: &'a OracleConfig,
    walls: WallSet,
    trees: TreeGrid,
    world: f64,
    h: usize,
    w: usize,
    cell_x: f64,
    cell_y: f64,
    capture_r: f64,
    dtheta: f64,
    freq_ghz: f64,
    p_tx: f64,
    h_tx: f64,
    acc: Vec<f64>,
    crossing_buf: Vec<Vec<Crossing>>,
    chord_buf: Vec<Vec<(f64, f64, f64)>>,
}

impl Tracer<'_> {
    /// Distance to the boundary of the world grown by `margin` on every side.
    fn exit_distance(&self, o: Vec2, d: Vec2, margin: f64) -> f64 {
        let mut t = f64::INFINITY;
        for (oo, dd) in [(o.x, d.x), (o.y, d.y)] {
            if dd > 1e-15 {
                t = t.min((self.world + margin - oo) / dd);
            } else if dd < -1e-15 {
                t = t.min((-margin - oo) / dd);
            }
        }
        t.max(0.0)
    }

    /// Distance bound from a wall of height `h` at unfolded distance `s`.
    fn wall_bound(&self, s: f64, h: f64) -> f64 {
        if h >= self.h_tx {
            f64::INFINITY
        } else {
            s * (self.h_tx - self.cfg.rx_height_m) / (self.h_tx - h)
        }
    }

    fn trace(&mut self, k: usize, br: Branch, depth: usize) {
        let t_exit = self.exit_distance(br.origin, br.dir, 0.0);
        if self.crossing_buf.len() <= depth {
            self.crossing_buf.push(Vec::new());
            self.chord_buf.push(Vec::new());
        }
        let mut xs = std::mem::take(&mut self.crossing_buf[depth]);
        let mut chords = std::mem::take(&mut self.chord_buf[depth]);
        self.walls.crossings(br.origin, br.dir, t_exit, br.skip_wall, &mut xs);
        // Cells near the world edge can be within capture range of a ray that
        // has already left the world.
        let t_end = self.exit_distance(br.origin, br.dir, self.capture_r);
        self.trees.chords(br.origin, br.dir, t_end, &mut chords);
        for c in &mut chords {
            c.2 = self.cfg.tree_loss_db_per_m * c.2 / FOLIAGE_REFERENCE_HEIGHT_M;
        }
        let foliage = |t: f64| -> f64 { chords.iter().map(|&(a, b, rate)| rate * (b.min(t) - a).max(0.0)).sum() };

        let mut lo = br.lo;
        let mut t_prev = 0.0;
        let mut alive = true;
        for x in &xs {
            self.deposit(k, &br, t_prev, x.t, lo, &chords);
            let s = br.s0 + x.t;
            if x.entering && !x.corner && br.bounces_left > 0 {
                let hi = br.hi.min(self.wall_bound(s, x.height));
                if lo.max(s) < hi {
                    let wall = self.walls.walls[x.wall];
                    let p = br.origin + br.dir * x.t;
                    let beta = wall.axis.angle();
                    let child = Branch {
                        source: wall.a + (br.source - wall.a).reflect_across(wall.axis),
                        origin: p,
                        dir: br.dir.reflect_across(wall.axis),
                        s0: s,
                        sigma: -br.sigma,
                        phase: 2.0 * beta - br.phase,
                        lo,
                        hi,
                        bounces_left: br.bounces_left - 1,
                        loss_db: br.loss_db + self.cfg.reflection_loss_db + foliage(x.t),
                        skip_wall: Some(x.wall),
                    };
                    self.trace(k, child, depth + 1);
                }
            }
            if x.height >= self.h_tx {
                alive = false;
                break;
            }
            lo = lo.max(self.wall_bound(s, x.height));
            if lo >= br.hi {
                alive = false;
                break;
            }
            t_prev = x.t;
        }
        if alive {
            self.deposit(k, &br, t_prev, t_end, lo, &chords);
        }
        self.crossing_buf[depth] = xs;
        self.chord_buf[depth] = chords;
    }

    /// Credit cells whose projection on the branch falls in `[ta, tb)`.
    fn deposit(&mut self, k: usize, br: &Branch, ta: f64, tb: f64, lo: f64, chords: &[(f64, f64, f64)]) {
        if tb <= ta {
            return;
        }
        let r = self.capture_r;
        let a = br.origin + br.dir * ta;
        let b = br.origin + br.dir * tb;
        let n = (2.0 * PI / self.dtheta).round() as i64;
        let (h, w) = (self.h, self.w);
        let x_major = br.dir.x.abs() >= br.dir.y.abs();
        // Major axis: sweep cells along it; minor axis: band around the line.
        let (amin, amax, cs_major, n_major, cs_minor, n_minor) = if x_major {
            (a.x.min(b.x), a.x.max(b.x), self.cell_x, w, self.cell_y, h)
        } else {
            (a.y.min(b.y), a.y.max(b.y), self.cell_y, h, self.cell_x, w)
        };
        let idx_range = |lo_v: f64, hi_v: f64, cs: f64, n: usize| {
            let i0 = ((lo_v / cs - 0.5).ceil()).max(0.0);
            let i1 = ((hi_v / cs - 0.5).floor()).min(n as f64 - 1.0);
            (i0 as i64, i1 as i64)
        };
        let (m0, m1) = idx_range(amin - r, amax + r, cs_major, n_major);
        let (o_major, o_minor, d_major, d_minor) = if x_major {
            (br.origin.x, br.origin.y, br.dir.x, br.dir.y)
        } else {
            (br.origin.y, br.origin.x, br.dir.y, br.dir.x)
        };
        let band = r / d_major.abs() + 1e-9;
        for mi in m0..=m1 {
            let cm = (mi as f64 + 0.5) * cs_major;
            let line = o_minor + (cm - o_major) * d_minor / d_major;
            let (n0, n1) = idx_range(line - band, line + band, cs_minor, n_minor);
            for ni in n0..=n1 {
                let (i, j) = if x_major { (ni as usize, mi as usize) } else { (mi as usize, ni as usize) };
                let c = Vec2::new((j as f64 + 0.5) * self.cell_x, (i as f64 + 0.5) * self.cell_y);
                let v = c - br.source;
                let tau = v.dot(br.dir);
                if tau < br.s0 + ta || tau >= br.s0 + tb {
                    continue;
                }
                let d = v.norm();
                if d < lo || d >= br.hi {
                    continue;
                }
                let alpha = if d > r { (r / d).asin() } else { 0.5 * PI };
                let center = br.sigma * (v.angle() - br.phase);
                let k_lo = ((center - alpha) / self.dtheta).ceil() as i64;
                let k_hi = ((center + alpha) / self.dtheta).floor() as i64;
                let count = k_hi - k_lo + 1;
                if count <= 0 || (k as i64 - k_lo).rem_euclid(n) > k_hi - k_lo {
                    continue;
                }
                let loss = br.loss_db + chords.iter().map(|&(c0, c1, rate)| rate * (c1.min(tau - br.s0) - c0).max(0.0)).sum::<f64>();
                let db = self.p_tx - fspl_unchecked(d.max(MIN_DISTANCE_M), self.freq_ghz) - loss;
                self.acc[i * w + j] += 10f64.powf(db / 10.0) / count.min(n) as f64;
            }
        }
    }
}

/// Ground-truth radio map of `scene` on an `h x w` grid.
pub fn trace_radio_map(scene: &SceneSpec, cfg: &OracleConfig, h: usize, w: usize) -> Result<RadioMap> {
    cfg.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::Contract("radio map resolution must be positive".into()));
    }
    let txp = scene.tx.position();
    if !scene.in_world(txp) {
        return Err(Error::Contract("tx outside world bounds".into()));
    }
    if let Some(bi) = scene.buildings.iter().position(|b| b.contains(txp)) {
        return Err(Error::Contract(format!("tx inside building {bi}")));
    }
    if scene.tx.height_m <= cfg.rx_height_m {
        return Err(Error::Contract("tx must be above the receiver height".into()));
    }
    let world = scene.world_size_m;
    let (cell_x, cell_y) = (world / w as f64, world / h as f64);
    let mut tr = Tracer {
        cfg,
        walls: WallSet::new(scene),
        trees: TreeGrid::new(scene, 16.0),
        world,
        h,
        w,
        cell_x,
        cell_y,
        capture_r: 0.5 * cell_x.hypot(cell_y),
        dtheta: 2.0 * PI / cfg.n_rays as f64,
        freq_ghz: scene.freq_ghz,
        p_tx: tx_power_db(),
        h_tx: scene.tx.height_m,
        acc: vec![0.0; h * w],
        crossing_buf: Vec::new(),
        chord_buf: Vec::new(),
    };
    for k in 0..cfg.n_rays {
        let theta = k as f64 * tr.dtheta;
        let br = Branch {
            source: txp,
            origin: txp,
            dir: Vec2::from_angle(theta),
            s0: 0.0,
            sigma: 1.0,
            phase: 0.0,
            lo: 0.0,
            hi: f64::INFINITY,
            bounces_left: cfg.max_bounces,
            loss_db: 0.0,
            skip_wall: None,
        };
        tr.trace(k, br, 0);
    }
    let power = tr
        .acc
        .iter()
        .map(|&p| if p > 0.0 { (10.0 * p.log10()) as f32 } else { cfg.power_min_db as f32 })
        .collect();
    RadioMap::from_power_db(h, w, power, cfg.power_min_db, cfg.power_max_db)
}
