//! Multi-head self-attention: row-stochastic weights and permutation
//! equivariance of a transformer layer.

use radionet::nn::{MhsaParams, ParamStore, TransformerConfig, TransformerLayer};
use radionet::tensor::{Graph, RngState, Tensor};

fn main() -> radionet::Result<()> {
    let cfg = TransformerConfig::new(32, 4, 64)?;
    let mut store = ParamStore::new();
    let mut rng = RngState::new(0);
    let mhsa = MhsaParams::new(&mut store, "attn", cfg, &mut rng);
    let layer = TransformerLayer::new(&mut store, "layer", cfg, &mut rng)?;
    let x = Tensor::randn(&[1, 4, 32], 1.0, &mut rng);

    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let (_, attn) = mhsa.forward_with_attention(&mut g, &p, xv)?;
    let worst = g
        .value(attn)
        .chunks(4)
        .map(|row| (row.iter().map(|&a| a as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("attention {:?}, worst row-sum deviation {worst:.1e}", g.shape(attn));

    let y = layer.forward(&mut g, &p, xv)?;
    let y = g.tensor(y);
    let perm = [2, 0, 3, 1];
    let mut xp = Vec::new();
    let mut yp = Vec::new();
    for &k in &perm {
        xp.extend_from_slice(&x.data()[k * 32..(k + 1) * 32]);
        yp.extend_from_slice(&y.data()[k * 32..(k + 1) * 32]);
    }
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(Tensor::new(&[1, 4, 32], xp)?);
    let y2 = layer.forward(&mut g, &p, xv)?;
    let diff = g.tensor(y2).max_abs_diff(&Tensor::new(&[1, 4, 32], yp)?);
    println!("layer(permuted x) vs permuted layer(x): max diff {diff:.1e}");
    Ok(())
}
