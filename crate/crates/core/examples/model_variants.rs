//! Build each architecture variant at desk scale and run one forward pass.

use radionet::model::{grid_embedding, tx_locations, ModelConfig, RadioNet, Variant};
use radionet::scene::{generate_scene, rasterize_scene, SceneParams};
use radionet::tensor::RngState;
use std::time::Instant;

fn main() -> radionet::Result<()> {
    let scene = generate_scene(&mut RngState::new(3), &SceneParams::default())?;
    for v in Variant::ALL {
        let cfg = ModelConfig::build_variant(v);
        let model = RadioNet::new(cfg.clone(), &mut RngState::new(0))?;
        let maps = rasterize_scene(&scene, cfg.input_res, cfg.input_res)?;
        let x = model.input_batch(&[&maps])?;
        let t = Instant::now();
        let y = model.predict(&x)?;
        println!(
            "{:<18} {:>8} params  in {:?} -> out {:?}  {:.1} ms",
            v.name(),
            model.params.numel(),
            x.shape(),
            y.shape(),
            1e3 * t.elapsed().as_secs_f64()
        );
    }

    let cfg = ModelConfig::build_variant(Variant::RadioNet);
    let maps = rasterize_scene(&scene, cfg.input_res, cfg.input_res)?;
    let tx = tx_locations(&radionet::model::input_batch(&[&maps], cfg.input_channels())?)?[0];
    let ge = grid_embedding(cfg.patch_grid, tx);
    println!("tx at normalized {tx:?}; grid embedding rows 0 and 9:");
    for k in [0, 9] {
        println!("  patch {k}: {:?}", &ge.data()[4 * k..4 * k + 4]);
    }
    Ok(())
}
