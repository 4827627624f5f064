use crate::geometry::{chord_in_disk, ray_segment, Aabb, Vec2};
use crate::scene::{SceneSpec, TREE_CANOPY_RADIUS_M};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Wall {
    pub a: Vec2,
    pub b: Vec2,
    /// Unit direction `a -> b`.
    pub axis: Vec2,
    /// Unit normal pointing out of the footprint.
    pub outward: Vec2,
    pub height: f64,
    pub building: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Crossing {
    pub t: f64,
    pub wall: usize,
    pub height: f64,
    /// Ray arrives from outside the footprint.
    pub entering: bool,
    /// Hit lands on a wall endpoint.
    pub corner: bool,
}

/// Walls grouped per building with bounding boxes for culling.
pub(crate) struct WallSet {
    pub walls: Vec<Wall>,
    groups: Vec<(Aabb, std::ops::Range<usize>)>,
}

impl WallSet {
    pub fn new(scene: &SceneSpec) -> Self {
        let mut walls = Vec::new();
        let mut groups = Vec::new();
        for (bi, b) in scene.buildings.iter().enumerate() {
            let pts = &b.footprint_m;
            let area2: f64 = (0..pts.len()).map(|i| pts[i].cross(pts[(i + 1) % pts.len()])).sum();
            let start = walls.len();
            for (a, e) in b.walls() {
                let axis = (e - a).normalized();
                // Interior lies left of each edge for positive orientation.
                let right = Vec2::new(axis.y, -axis.x);
                let outward = if area2 > 0.0 { right } else { -right };
                walls.push(Wall {
                    a,
                    b: e,
                    axis,
                    outward,
                    height: b.height_m,
                    building: bi,
                });
            }
            groups.push((b.bbox(), start..walls.len()));
        }
        Self { walls, groups }
    }

    /// All wall crossings along `origin + t dir` for `t in (eps, t_max)`, sorted by `t`.
    pub fn crossings(&self, origin: Vec2, dir: Vec2, t_max: f64, skip: Option<usize>, out: &mut Vec<Crossing>) {
        out.clear();
        for (bb, range) in &self.groups {
            if !slab_hit(bb, origin, dir, t_max) {
                continue;
            }
            for wi in range.clone() {
                if Some(wi) == skip {
                    continue;
                }
                let w = &self.walls[wi];
                if let Some((t, u)) = ray_segment(origin, dir, w.a, w.b) {
                    if t > 1e-9 && t < t_max {
                        out.push(Crossing {
                            t,
                            wall: wi,
                            height: w.height,
                            entering: dir.dot(w.outward) < 0.0,
                            corner: !(1e-9..=1.0 - 1e-9).contains(&u),
                        });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.wall.cmp(&b.wall)));
    }
}

fn slab_hit(bb: &Aabb, o: Vec2, d: Vec2, t_max: f64) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for (oo, dd, lo, hi) in [(o.x, d.x, bb.min.x, bb.max.x), (o.y, d.y, bb.min.y, bb.max.y)] {
        if dd.abs() < 1e-15 {
            if oo < lo || oo > hi {
                return false;
            }
        } else {
            let (a, b) = ((lo - oo) / dd, (hi - oo) / dd);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    t0 <= t1 + 1e-9
}

/// Uniform bucket grid over tree canopies.
pub(crate) struct TreeGrid {
    size: f64,
    n: usize,
    buckets: Vec<Vec<u32>>,
    trees: Vec<(Vec2, f64)>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl TreeGrid {
    pub fn new(scene: &SceneSpec, bucket_m: f64) -> Self {
        let n = ((scene.world_size_m / bucket_m).ceil() as usize).max(1);
        let size = scene.world_size_m / n as f64;
        let mut buckets = vec![Vec::new(); n * n];
        let r = TREE_CANOPY_RADIUS_M;
        let clampi = |v: f64| (v / size).floor().clamp(0.0, (n - 1) as f64) as usize;
        for (ti, t) in scene.trees.iter().enumerate() {
            for i in clampi(t.y_m - r)..=clampi(t.y_m + r) {
                for j in clampi(t.x_m - r)..=clampi(t.x_m + r) {
                    buckets[i * n + j].push(ti as u32);
                }
            }
        }
        Self {
            size,
            n,
            buckets,
            trees: scene.trees.iter().map(|t| (t.position(), t.height_m)).collect(),
            stamp: vec![0; scene.trees.len()],
            epoch: 0,
        }
    }

    /// Canopy chords `(t0, t1, tree height)` along `origin + t dir`, `t in [0, t_max]`,
    /// found by a grid walk over the buckets the ray visits.
    pub fn chords(&mut self, origin: Vec2, dir: Vec2, t_max: f64, out: &mut Vec<(f64, f64, f64)>) {
        out.clear();
        if self.trees.is_empty() {
            return;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        let n = self.n as i64;
        let cell = |v: f64| (v / self.size).floor() as i64;
        let (mut i, mut j) = (cell(origin.y), cell(origin.x));
        let step_j: i64 = if dir.x >= 0.0 { 1 } else { -1 };
        let step_i: i64 = if dir.y >= 0.0 { 1 } else { -1 };
        let next = |c: i64, step: i64| (c + (step > 0) as i64) as f64 * self.size;
        let mut tj = if dir.x.abs() < 1e-15 { f64::INFINITY } else { (next(j, step_j) - origin.x) / dir.x };
        let mut ti = if dir.y.abs() < 1e-15 { f64::INFINITY } else { (next(i, step_i) - origin.y) / dir.y };
        let dtj = if dir.x.abs() < 1e-15 { f64::INFINITY } else { self.size / dir.x.abs() };
        let dti = if dir.y.abs() < 1e-15 { f64::INFINITY } else { self.size / dir.y.abs() };
        let end = origin + dir * t_max;
        loop {
            if (0..n).contains(&i) && (0..n).contains(&j) {
                for &tid in &self.buckets[(i * n + j) as usize] {
                    let tid = tid as usize;
                    if self.stamp[tid] == self.epoch {
                        continue;
                    }
                    self.stamp[tid] = self.epoch;
                    let (c, h) = self.trees[tid];
                    if let Some((a, b)) = chord_in_disk(origin, end, c, TREE_CANOPY_RADIUS_M) {
                        out.push((a, b, h));
                    }
                }
            }
            let t = ti.min(tj);
            if t > t_max {
                break;
            }
            if tj <= ti {
                j += step_j;
                tj += dtj;
            } else {
                i += step_i;
                ti += dti;
            }
            let outside = (step_j > 0 && j >= n) || (step_j < 0 && j < 0) || (step_i > 0 && i >= n) || (step_i < 0 && i < 0);
            if outside {
                break;
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
}
