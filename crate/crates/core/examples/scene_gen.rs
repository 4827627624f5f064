//! Generate a random urban scene, print it as TOML and summarize its
//! rasterized input features.

use radionet::scene::{generate_scene, rasterize_scene, SceneParams, FEATURE_CHANNELS};
use radionet::tensor::RngState;

fn main() -> radionet::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().unwrap());
    let scene = generate_scene(&mut RngState::new(seed), &SceneParams::default())?;
    let text = scene.to_toml()?;
    println!("{}", text.lines().take(24).collect::<Vec<_>>().join("\n"));
    println!("...\n{} buildings, {} trees, tx at ({:.1}, {:.1}) m, {:.1} m high, {:.3} GHz",
        scene.buildings.len(), scene.trees.len(), scene.tx.x_m, scene.tx.y_m, scene.tx.height_m, scene.freq_ghz);

    let maps = rasterize_scene(&scene, 128, 128)?;
    for (k, name) in FEATURE_CHANNELS.iter().enumerate() {
        let ch = maps.channel(k);
        let nonzero = ch.iter().filter(|&&v| v != 0.0).count();
        let max = ch.iter().cloned().fold(0.0f32, f32::max);
        println!("{name:<9} nonzero cells {nonzero:5}  max {max:.3}");
    }
    println!("tx cell {:?}", maps.tx_cell());
    Ok(())
}
