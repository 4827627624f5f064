use crate::error::{Error, Result};

/// Width of the normalized power range in dB.
pub const DB_RANGE: f64 = 180.0;
pub const RELIABILITY_THRESHOLD_DB: f64 = 10.0;

/// How per-pixel errors of one map combine into that map's error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MapAggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Mean absolute error in normalized units.
    pub l1: f64,
    /// `l1` expressed in dB.
    pub e_db: f64,
    /// Fraction of maps whose error is below the threshold.
    pub reliability: f64,
    pub threshold_db: f64,
    pub per_map_errors_db: Vec<f64>,
}

pub fn l1_to_db(l1: f64) -> f64 {
    l1 * DB_RANGE
}

/// Fraction of `errors_db` strictly below `threshold_db`.
pub fn reliability(errors_db: &[f64], threshold_db: f64) -> f64 {
    if errors_db.is_empty() {
        return 0.0;
    }
    errors_db.iter().filter(|&&e| e < threshold_db).count() as f64 / errors_db.len() as f64
}

/// Metrics over maps of `map_len` pixels stored back to back.
pub fn compute_metrics(
    pred: &[f32],
    target: &[f32],
    map_len: usize,
    aggregation: MapAggregation,
    threshold_db: f64,
) -> Result<Metrics> {
    if pred.len() != target.len() || map_len == 0 || pred.len() % map_len != 0 {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Contract("metrics over an empty split".into()));
    }
    let mut total = 0.0f64;
    let mut per_map = Vec::with_capacity(pred.len() / map_len);
    for (p, t) in pred.chunks_exact(map_len).zip(target.chunks_exact(map_len)) {
        let errs = p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).abs());
        let (sum, max) = errs.fold((0.0f64, 0.0f64), |(s, m), e| (s + e, m.max(e)));
        total += sum;
        per_map.push(l1_to_db(match aggregation {
            MapAggregation::Mean => sum / map_len as f64,
            MapAggregation::Max => max,
        }));
    }
    let l1 = total / pred.len() as f64;
    Ok(Metrics {
        l1,
        e_db: l1_to_db(l1),
        reliability: reliability(&per_map, threshold_db),
        threshold_db,
        per_map_errors_db: per_map,
    })
}
