//! Optimization loop, evaluation metrics and the inference benchmark.

mod adam;
mod metrics;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use metrics::{compute_metrics, l1_to_db, reliability, MapAggregation, Metrics, DB_RANGE, RELIABILITY_THRESHOLD_DB};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::RadioNet;
use crate::oracle::{trace_radio_map, OracleConfig};
use crate::scene::{rasterize_scene, SceneSpec};
use crate::tensor::{Graph, RngState};
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            _ => Err(Error::Config(format!("unknown loss {s:?}; expected l1 or l2"))),
        }
    }
}

impl FromStr for MapAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            _ => Err(Error::Config(format!("unknown map error {s:?}; expected mean or max"))),
        }
    }
}

impl MapAggregation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Max => "max",
        }
    }
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Train : validation split.
    pub split: (u32, u32),
    pub loss: LossKind,
    /// Log a curve point every this many iterations (and at the end).
    pub eval_every: usize,
    /// Per-map error used for reliability in reports.
    pub map_error: MapAggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            iterations: 20_000,
            seed: 0,
            split: (9, 1),
            loss: LossKind::L1,
            eval_every: 500,
            map_error: MapAggregation::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be at least 1".into()));
        }
        if self.split.0 == 0 || self.split.1 == 0 {
            return Err(Error::Config("train.split parts must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Mean L1 of the training batches since the previous point.
    pub train_l1: f64,
    pub val_l1: Option<f64>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iteration,train_l1,val_l1\n");
    for p in curve {
        let val = p.val_l1.map_or(String::new(), |v| format!("{v:.6}"));
        writeln!(s, "{},{:.6},{val}", p.iteration, p.train_l1).unwrap();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub l1: f64,
}

/// Model, optimizer state and data order of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: RadioNet,
    pub adam: Adam,
    pub cfg: TrainConfig,
    /// Completed optimizer steps.
    pub iteration: usize,
    pub train_indices: Vec<usize>,
}

impl Trainer {
    pub fn new(model: RadioNet, cfg: TrainConfig, train_indices: Vec<usize>) -> Result<Self> {
        cfg.validate()?;
        if train_indices.is_empty() {
            return Err(Error::Contract("empty training split".into()));
        }
        let adam = Adam::new(&model.params);
        Ok(Self {
            model,
            adam,
            cfg,
            iteration: 0,
            train_indices,
        })
    }

    /// Dataset indices for `iteration`. Epoch `e` visits the training split in
    /// the order of a shuffle seeded by `(seed, e)`, so the order depends only
    /// on the seed and resuming needs nothing but the iteration count.
    pub fn batch_indices(&self, iteration: usize) -> Vec<usize> {
        let n = self.train_indices.len();
        let b = self.cfg.batch_size;
        let mut out = Vec::with_capacity(b);
        let mut cached: Option<(usize, Vec<usize>)> = None;
        for k in iteration * b..(iteration + 1) * b {
            let (epoch, pos) = (k / n, k % n);
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut order = self.train_indices.clone();
                RngState::with_stream(self.cfg.seed, epoch as u64).shuffle(&mut order);
                cached = Some((epoch, order));
            }
            out.push(cached.as_ref().unwrap().1[pos]);
        }
        out
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self, data: &Dataset) -> Result<StepStats> {
        let idx = self.batch_indices(self.iteration);
        let (x, y) = data.batch(&idx, self.model.cfg.input_channels())?;
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let xv = g.constant(x);
        let pred = self.model.forward(&mut g, &p, xv)?;
        let yv = g.constant(y);
        let l1 = g.l1_loss(pred, yv)?;
        let loss = match self.cfg.loss {
            LossKind::L1 => l1,
            LossKind::L2 => g.mse_loss(pred, yv)?,
        };
        let (lv, l1v) = (g.scalar(loss), g.scalar(l1));
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration + 1,
            });
        }
        let grads = g.backward(loss)?;
        self.model.params.absorb_grads(&grads, &p)?;
        self.adam.step(&mut self.model.params, self.cfg.lr)?;
        self.iteration += 1;
        Ok(StepStats { loss: lv, l1: l1v })
    }

    /// Step until `cfg.iterations`, logging a curve point every `eval_every`
    /// iterations with the validation L1 over `val` (when given).
    pub fn run(
        &mut self,
        data: &Dataset,
        val: Option<&[usize]>,
        on_point: &mut dyn FnMut(&CurvePoint),
    ) -> Result<Vec<CurvePoint>> {
        let mut curve = Vec::new();
        let (mut acc, mut n) = (0.0, 0usize);
        while self.iteration < self.cfg.iterations {
            acc += self.step(data)?.l1;
            n += 1;
            if self.iteration % self.cfg.eval_every == 0 || self.iteration == self.cfg.iterations {
                let val_l1 = match val {
                    Some(v) if !v.is_empty() => Some(evaluate(&self.model, data, v, MapAggregation::Mean)?.l1),
                    _ => None,
                };
                let point = CurvePoint {
                    iteration: self.iteration,
                    train_l1: acc / n as f64,
                    val_l1,
                };
                on_point(&point);
                curve.push(point);
                (acc, n) = (0.0, 0);
            }
        }
        Ok(curve)
    }
}

/// Predictions for `indices`, concatenated in order.
pub fn predict_indices(model: &RadioNet, data: &Dataset, indices: &[usize]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(indices.len() * data.target_len());
    for chunk in indices.chunks(8) {
        let (x, _) = data.batch(chunk, model.cfg.input_channels())?;
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Ok(out)
}

/// Metrics of `model` on the samples `indices`.
pub fn evaluate(model: &RadioNet, data: &Dataset, indices: &[usize], aggregation: MapAggregation) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let pred = predict_indices(model, data, indices)?;
    let mut target = Vec::with_capacity(pred.len());
    for &i in indices {
        target.extend_from_slice(data.target(i));
    }
    compute_metrics(&pred, &target, data.target_len(), aggregation, RELIABILITY_THRESHOLD_DB)
}

/// Wall-clock comparison of model inference and oracle tracing per scene.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    /// Rasterization plus forward pass, seconds per scene.
    pub model_s: Vec<f64>,
    pub oracle_s: Vec<f64>,
    pub mean_model_s: f64,
    pub mean_oracle_s: f64,
    /// `mean_oracle_s / mean_model_s`.
    pub ratio: f64,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "scenes = {}", self.model_s.len()).unwrap();
        writeln!(s, "mean_model_latency_s = {:.6}", self.mean_model_s).unwrap();
        writeln!(s, "mean_oracle_latency_s = {:.6}", self.mean_oracle_s).unwrap();
        writeln!(s, "ratio = {:.3}", self.ratio).unwrap();
        writeln!(s, "scene,model_s,oracle_s").unwrap();
        for (i, (m, o)) in self.model_s.iter().zip(&self.oracle_s).enumerate() {
            writeln!(s, "{i},{m:.6},{o:.6}").unwrap();
        }
        s
    }
}

pub fn benchmark_inference(model: &RadioNet, scenes: &[SceneSpec], oracle: &OracleConfig) -> Result<BenchReport> {
    if scenes.len() < 10 {
        return Err(Error::Contract(format!("benchmark needs at least 10 scenes, got {}", scenes.len())));
    }
    let (res_in, res_out) = (model.cfg.input_res, model.cfg.output_res);
    // Warm-up so allocator and caches do not bias the first scene.
    let maps = rasterize_scene(&scenes[0], res_in, res_in)?;
    model.predict(&model.input_batch(&[&maps])?)?;
    let (mut model_s, mut oracle_s) = (Vec::new(), Vec::new());
    for s in scenes {
        let t = Instant::now();
        let maps = rasterize_scene(s, res_in, res_in)?;
        let out = model.predict(&model.input_batch(&[&maps])?)?;
        model_s.push(t.elapsed().as_secs_f64());
        std::hint::black_box(out);
        let t = Instant::now();
        let map = trace_radio_map(s, oracle, res_out, res_out)?;
        oracle_s.push(t.elapsed().as_secs_f64());
        std::hint::black_box(map);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mm, mo) = (mean(&model_s), mean(&oracle_s));
    Ok(BenchReport {
        model_s,
        oracle_s,
        mean_model_s: mm,
        mean_oracle_s: mo,
        ratio: mo / mm,
    })
}
