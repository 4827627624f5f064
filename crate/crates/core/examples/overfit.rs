//! Overfit the desk model on a handful of samples.
//!
//! `cargo run --example overfit -- [samples] [max_iterations] [lr]`

use radionet::dataset::{generate_dataset, GenerationSpec};
use radionet::model::{ModelConfig, RadioNet, Variant};
use radionet::oracle::OracleConfig;
use radionet::scene::SceneParams;
use radionet::tensor::RngState;
use radionet::train::{l1_to_db, TrainConfig, Trainer};

fn main() -> radionet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let samples: usize = args.first().map_or(8, |s| s.parse().unwrap());
    let max_iter: usize = args.get(1).map_or(2000, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(1e-3, |s| s.parse().unwrap());

    let cfg = ModelConfig::build_variant(Variant::RadioNet);
    let spec = GenerationSpec {
        count: samples,
        seed: 7,
        input_res: cfg.input_res,
        output_res: cfg.output_res,
        scene: SceneParams::default(),
        oracle: OracleConfig::default(),
    };
    let data = generate_dataset(&spec, &|_| {})?;
    let model = RadioNet::new(cfg, &mut RngState::new(0))?;
    let tc = TrainConfig {
        lr,
        batch_size: samples.min(8),
        iterations: max_iter,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, tc, (0..samples).collect())?;
    let t = std::time::Instant::now();
    while trainer.iteration < max_iter {
        let s = trainer.step(&data)?;
        if trainer.iteration % 50 == 0 || s.l1 < 0.02 {
            println!(
                "iter {:5}  l1 {:.5}  ({:.2} dB)  {:.0}s",
                trainer.iteration,
                s.l1,
                l1_to_db(s.l1),
                t.elapsed().as_secs_f64()
            );
        }
        if s.l1 < 0.02 {
            break;
        }
    }
    Ok(())
}
