//! Trace the ground-truth radio map of one scene and write it as images.
//!
//! `cargo run --example oracle_trace -- [seed] [out_dir]`

use radionet::io::GrayImage;
use radionet::oracle::{trace_radio_map, OracleConfig};
use radionet::scene::{generate_scene, SceneParams};
use radionet::tensor::RngState;
use std::path::PathBuf;
use std::time::Instant;

fn main() -> radionet::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().unwrap());
    let dir = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    let scene = generate_scene(&mut RngState::new(seed), &SceneParams::default())?;
    let cfg = OracleConfig::default();
    for res in [32, 64] {
        let t = Instant::now();
        let map = trace_radio_map(&scene, &cfg, res, res)?;
        let secs = t.elapsed().as_secs_f64();
        let (lo, hi) = map.power_db.iter().fold((f32::MAX, f32::MIN), |(a, b), &p| (a.min(p), b.max(p)));
        println!("{res}x{res}: {secs:.3} s, power {lo:.1} .. {hi:.1} dB");
        let img = GrayImage::from_power_db(&map.power_db, res, res, cfg.power_min_db, cfg.power_max_db)?;
        img.write_pgm(&dir.join(format!("oracle_{res}.pgm")))?;
        img.write_ppm(&dir.join(format!("oracle_{res}.ppm")))?;
    }
    Ok(())
}
