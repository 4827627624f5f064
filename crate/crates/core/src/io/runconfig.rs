use crate::error::{Error, Result};
use crate::model::{parse_pairs, parse_value, ModelConfig, Variant};
use crate::oracle::OracleConfig;
use crate::scene::SceneParams;
use crate::train::TrainConfig;
use std::path::Path;

/// Everything a command needs besides file paths and the seed.
///
/// Text form is flat `section.key = value` lines with sections `model`,
/// `train`, `scene` and `oracle`. Missing keys keep their defaults; the model
/// defaults follow `model.variant`. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneParams,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::build_variant(Variant::RadioNet),
            train: TrainConfig::default(),
            scene: SceneParams::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn entries(&self) -> Vec<(String, String)> {
        let (t, s, o) = (&self.train, &self.scene, &self.oracle);
        let mut out: Vec<(String, String)> = self
            .model
            .entries()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        let rest: [(&str, String); 26] = [
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.iterations", t.iterations.to_string()),
            ("train.split", format!("{}:{}", t.split.0, t.split.1)),
            ("train.loss", t.loss.name().to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.map_error", t.map_error.name().to_string()),
            ("scene.world_size_m", s.world_size_m.to_string()),
            ("scene.building_count", s.building_count.to_string()),
            ("scene.road_width_m", s.road_width_m.to_string()),
            ("scene.block_min_m", s.block_min_m.to_string()),
            ("scene.block_max_m", s.block_max_m.to_string()),
            ("scene.lot_min_m", s.lot_min_m.to_string()),
            ("scene.lot_max_m", s.lot_max_m.to_string()),
            ("scene.building_gap_m", s.building_gap_m.to_string()),
            ("scene.tree_spacing_m", s.tree_spacing_m.to_string()),
            ("scene.tree_jitter_m", s.tree_jitter_m.to_string()),
            ("scene.tree_setback_m", s.tree_setback_m.to_string()),
            ("scene.max_retries", s.max_retries.to_string()),
            ("oracle.n_rays", o.n_rays.to_string()),
            ("oracle.max_bounces", o.max_bounces.to_string()),
            ("oracle.reflection_loss_db", o.reflection_loss_db.to_string()),
            ("oracle.tree_loss_db_per_m", o.tree_loss_db_per_m.to_string()),
            ("oracle.rx_height_m", o.rx_height_m.to_string()),
            ("oracle.power_min_db", o.power_min_db.to_string()),
            ("oracle.power_max_db", o.power_max_db.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, s, o) = (&mut self.train, &mut self.scene, &mut self.oracle);
        let v = value;
        match key {
            "train.lr" => t.lr = parse_value(key, v)?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.iterations" => t.iterations = parse_value(key, v)?,
            "train.split" => {
                let bad = || Error::Config(format!("invalid value {v:?} for {key}; expected a:b"));
                let (a, b) = v.split_once(':').ok_or_else(bad)?;
                t.split = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            }
            "train.loss" => t.loss = v.parse()?,
            "train.eval_every" => t.eval_every = parse_value(key, v)?,
            "train.map_error" => t.map_error = v.parse()?,
            "scene.world_size_m" => s.world_size_m = parse_value(key, v)?,
            "scene.building_count" => s.building_count = parse_value(key, v)?,
            "scene.road_width_m" => s.road_width_m = parse_value(key, v)?,
            "scene.block_min_m" => s.block_min_m = parse_value(key, v)?,
            "scene.block_max_m" => s.block_max_m = parse_value(key, v)?,
            "scene.lot_min_m" => s.lot_min_m = parse_value(key, v)?,
            "scene.lot_max_m" => s.lot_max_m = parse_value(key, v)?,
            "scene.building_gap_m" => s.building_gap_m = parse_value(key, v)?,
            "scene.tree_spacing_m" => s.tree_spacing_m = parse_value(key, v)?,
            "scene.tree_jitter_m" => s.tree_jitter_m = parse_value(key, v)?,
            "scene.tree_setback_m" => s.tree_setback_m = parse_value(key, v)?,
            "scene.max_retries" => s.max_retries = parse_value(key, v)?,
            "oracle.n_rays" => o.n_rays = parse_value(key, v)?,
            "oracle.max_bounces" => o.max_bounces = parse_value(key, v)?,
            "oracle.reflection_loss_db" => o.reflection_loss_db = parse_value(key, v)?,
            "oracle.tree_loss_db_per_m" => o.tree_loss_db_per_m = parse_value(key, v)?,
            "oracle.rx_height_m" => o.rx_height_m = parse_value(key, v)?,
            "oracle.power_min_db" => o.power_min_db = parse_value(key, v)?,
            "oracle.power_max_db" => o.power_max_db = parse_value(key, v)?,
            _ => match key.strip_prefix("model.") {
                Some(k) => self.model.set(k, v)?,
                None => return Err(Error::Config(format!("unknown config key {key:?}"))),
            },
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = Self::default();
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "model.variant") {
            cfg.model = ModelConfig::from_name(v)?;
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        self.oracle.validate()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Same config with the model switched to `variant` at the current
    /// resolutions and widths.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let m = &self.model;
        let model = ModelConfig {
            input_res: m.input_res,
            output_res: m.output_res,
            ch: m.ch,
            channel_cap: m.channel_cap,
            enc_stages: m.enc_stages,
            dec_stages: m.dec_stages,
            patch_grid: m.patch_grid,
            transformer: m.transformer,
            ..ModelConfig::build_variant(variant)
        };
        Self { model, ..self.clone() }
    }
}
