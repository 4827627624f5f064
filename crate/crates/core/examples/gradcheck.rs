//! Central-difference gradient checks for every op, the transformer layer and
//! each model variant at tiny scale.

use radionet::model::{ModelConfig, RadioNet, Variant};
use radionet::nn::{sampled_gradient_check, Bound, ParamStore, TransformerConfig, TransformerLayer};
use radionet::tensor::{finite_difference_check, project, run_op_suite, Graph, RngState, Tensor};

fn main() -> radionet::Result<()> {
    for (name, err) in run_op_suite(1e-3)? {
        println!("{name:<24} rel err {err:.2e}");
    }

    let cfg = TransformerConfig::new(16, 4, 32)?;
    let mut store = ParamStore::new();
    let layer = TransformerLayer::new(&mut store, "t", cfg, &mut RngState::new(1))?;
    let x = Tensor::randn(&[2, 5, 16], 1.0, &mut RngState::new(2));
    let err = finite_difference_check(
        |g, x| {
            let p = store.bind_frozen(g);
            let y = layer.forward(g, &p, x)?;
            project(g, y, 3)
        },
        &x,
        1e-3,
    )?;
    println!("{:<24} rel err {err:.2e}", "transformer layer");

    for v in Variant::ALL {
        let cfg = ModelConfig::tiny(v);
        let m = RadioNet::new(cfg.clone(), &mut RngState::new(11))?;
        let input = Tensor::randn(&[1, cfg.input_channels(), 32, 32], 1.0, &mut RngState::new(12));
        let f = |g: &mut Graph, p: &Bound| {
            let x = g.constant(input.clone());
            let y = m.forward(g, p, x)?;
            project(g, y, 14)
        };
        let rep = sampled_gradient_check(&m.params, f, 20, 1e-3, &mut RngState::new(13))?;
        println!(
            "{:<24} rel err {:.2e} over {} sampled weights ({} kinked redraws)",
            v.name(),
            rep.rel_error,
            rep.checked,
            rep.skipped_kinks
        );
    }
    Ok(())
}
