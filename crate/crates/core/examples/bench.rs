//! Compare desk-scale model inference latency with oracle tracing.

use radionet::model::{ModelConfig, RadioNet, Variant};
use radionet::oracle::OracleConfig;
use radionet::scene::{generate_scene, SceneParams};
use radionet::tensor::RngState;
use radionet::train::benchmark_inference;

fn main() -> radionet::Result<()> {
    let scenes = (0..10)
        .map(|i| generate_scene(&mut RngState::with_stream(9, i), &SceneParams::default()))
        .collect::<radionet::Result<Vec<_>>>()?;
    for v in [Variant::Unet, Variant::RadioNet] {
        let model = RadioNet::new(ModelConfig::build_variant(v), &mut RngState::new(0))?;
        let r = benchmark_inference(&model, &scenes, &OracleConfig::default())?;
        println!(
            "{:<9} model {:.2} ms, oracle {:.2} ms, ratio {:.2}",
            v.name(),
            1e3 * r.mean_model_s,
            1e3 * r.mean_oracle_s,
            r.ratio
        );
    }
    Ok(())
}
