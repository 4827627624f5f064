//! Train all six variants on one small dataset with identical seeds and
//! print the comparison table.
//!
//! `cargo run --example ablation -- [samples] [iterations]`

use radionet::cli::ablation_table;
use radionet::dataset::{generate_dataset, GenerationSpec};
use radionet::io::RunConfig;
use radionet::model::{RadioNet, Variant};
use radionet::scene::split_dataset;
use radionet::tensor::RngState;
use radionet::train::{evaluate, MapAggregation, TrainConfig, Trainer};

fn main() -> radionet::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().map_or(40, |s| s.parse().unwrap());
    let iterations: usize = args.next().map_or(100, |s| s.parse().unwrap());
    let seed = 5;
    let base = RunConfig::default();
    let spec = GenerationSpec {
        count: samples,
        seed,
        input_res: base.model.input_res,
        output_res: base.model.output_res,
        scene: base.scene.clone(),
        oracle: base.oracle.clone(),
    };
    let data = generate_dataset(&spec, &|_| {})?;
    let (train_idx, val_idx) = split_dataset(data.len(), (4, 1), seed)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let cfg = base.with_variant(v);
        let model = RadioNet::new(cfg.model.clone(), &mut RngState::new(seed))?;
        let tc = TrainConfig { lr: 1e-3, iterations, seed, ..TrainConfig::default() };
        let mut t = Trainer::new(model, tc, train_idx.clone())?;
        t.run(&data, None, &mut |_| {})?;
        let m = evaluate(&t.model, &data, &val_idx, MapAggregation::Mean)?;
        eprintln!("{v}: val l1 {:.4}", m.l1);
        rows.push((v, t.model.params.numel(), m));
    }
    print!("{}", ablation_table(&rows, iterations, seed));
    Ok(())
}
