use itertools::Itertools;
use radionet::nn::{FfnParams, MhsaParams, ParamStore, TransformerConfig, TransformerLayer};
use radionet::tensor::{finite_difference_check, Graph, RngState, Tensor};

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let d = x.shape()[1];
    let mut out = Vec::with_capacity(perm.len() * d);
    for &p in perm {
        out.extend_from_slice(&x.data()[p * d..(p + 1) * d]);
    }
    Tensor::new(&[perm.len(), d], out).unwrap()
}

fn layer(d: usize, heads: usize, hidden: usize, seed: u64) -> (ParamStore, TransformerLayer) {
    let cfg = TransformerConfig::new(d, heads, hidden).unwrap();
    let mut store = ParamStore::new();
    let layer = TransformerLayer::new(&mut store, "t", cfg, &mut RngState::new(seed)).unwrap();
    (store, layer)
}

fn run_layer(store: &ParamStore, layer: &TransformerLayer, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = layer.forward(&mut g, &p, xv).unwrap();
    g.tensor(y)
}

#[test]
fn config_validation() {
    assert!(TransformerConfig::new(512, 8, 2048).is_ok());
    assert!(TransformerConfig::new(64, 4, 128).is_ok());
    assert!(TransformerConfig::new(30, 4, 128).is_err());
    assert_eq!(TransformerConfig::new(128, 4, 256).unwrap().d_head(), 32);
}

#[test]
fn single_item_attention_is_value_then_output_projection() {
    let cfg = TransformerConfig::new(8, 2, 16).unwrap();
    let mut store = ParamStore::new();
    let mhsa = MhsaParams::new(&mut store, "a", cfg, &mut RngState::new(1));
    let x = Tensor::randn(&[1, 8], 1.0, &mut RngState::new(2));
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x);
    let (y, attn) = mhsa.forward_with_attention(&mut g, &p, xv).unwrap();
    assert_eq!(g.value(attn), &[1.0, 1.0]);
    let v = g.matmul(xv, p.var(mhsa.w_v)).unwrap();
    let expect = g.matmul(v, p.var(mhsa.w_o)).unwrap();
    for (a, b) in g.value(y).iter().zip(g.value(expect)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn identical_items_give_identical_outputs() {
    let (store, layer) = layer(16, 4, 32, 3);
    let row = Tensor::randn(&[1, 16], 1.0, &mut RngState::new(4));
    let x = permute_rows(&row, &[0, 0, 0, 0, 0]);
    let y = run_layer(&store, &layer, &x);
    for r in 1..5 {
        for c in 0..16 {
            assert!((y.at(&[r, c]) - y.at(&[0, c])).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_rows_are_stochastic() {
    let cfg = TransformerConfig::new(16, 4, 32).unwrap();
    let mut store = ParamStore::new();
    let mhsa = MhsaParams::new(&mut store, "a", cfg, &mut RngState::new(5));
    let x = Tensor::randn(&[3, 7, 16], 2.0, &mut RngState::new(6));
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(x);
    let (_, attn) = mhsa.forward_with_attention(&mut g, &p, xv).unwrap();
    assert_eq!(g.shape(attn), &[12, 7, 7]);
    for row in g.value(attn).chunks(7) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn mhsa_and_layer_are_permutation_equivariant() {
    let (store, layer) = layer(8, 2, 16, 7);
    let x = Tensor::randn(&[4, 8], 1.0, &mut RngState::new(8));
    let y = run_layer(&store, &layer, &x);
    let mhsa_only = |x: &Tensor| {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let y = layer.mhsa.forward(&mut g, &p, xv).unwrap();
        g.tensor(y)
    };
    let ym = mhsa_only(&x);
    let mut count = 0;
    for perm in (0..4).permutations(4) {
        let px = permute_rows(&x, &perm);
        assert!(run_layer(&store, &layer, &px).max_abs_diff(&permute_rows(&y, &perm)) <= 1e-5);
        assert!(mhsa_only(&px).max_abs_diff(&permute_rows(&ym, &perm)) <= 1e-5);
        count += 1;
    }
    assert_eq!(count, 24);
}

#[test]
fn ffn_examples() {
    let cfg = TransformerConfig::new(4, 1, 4).unwrap();
    let mut store = ParamStore::new();
    let ffn = FfnParams::new(&mut store, "f", cfg, &mut RngState::new(9));
    let x = Tensor::uniform(&[3, 4], 0.0, 2.0, &mut RngState::new(10));

    let eval = |store: &ParamStore, x: &Tensor| {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let y = ffn.forward(&mut g, &p, xv).unwrap();
        g.tensor(y)
    };

    let mut zero = store.clone();
    for id in zero.ids().collect::<Vec<_>>() {
        zero.get_mut(id).data_mut().fill(0.0);
    }
    assert!(eval(&zero, &x).data().iter().all(|&v| v == 0.0));

    let mut ident = zero.clone();
    *ident.get_mut(ffn.w1) = Tensor::eye(4);
    *ident.get_mut(ffn.w2) = Tensor::eye(4);
    assert_eq!(eval(&ident, &x), x);

    // row k of the output depends only on row k of the input
    let y = eval(&store, &x);
    let mut x2 = x.clone();
    x2.data_mut()[4..8].iter_mut().for_each(|v| *v += 0.7);
    let y2 = eval(&store, &x2);
    for r in [0, 2] {
        for c in 0..4 {
            assert_eq!(y.at(&[r, c]), y2.at(&[r, c]));
        }
    }
    assert!((0..4).any(|c| y.at(&[1, c]) != y2.at(&[1, c])));
}

#[test]
fn layer_shape_contract() {
    let (store, layer) = layer(16, 4, 32, 11);
    for l in [1, 2, 5, 9] {
        let x = Tensor::randn(&[l, 16], 1.0, &mut RngState::new(l as u64));
        assert_eq!(run_layer(&store, &layer, &x).shape(), &[l, 16]);
    }
    let wrong = Tensor::randn(&[3, 12], 1.0, &mut RngState::new(12));
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant(wrong);
    assert!(layer.forward(&mut g, &p, xv).is_err());
}

#[test]
fn layer_gradient_check() {
    let (store, layer) = layer(16, 4, 32, 13);
    let x = Tensor::randn(&[4, 16], 1.0, &mut RngState::new(14));
    let r = Tensor::randn(&[4, 16], 1.0, &mut RngState::new(15));
    let err = finite_difference_check(
        |g, xv| {
            let p = store.bind_frozen(g);
            let y = layer.forward(g, &p, xv)?;
            let rv = g.constant(r.clone());
            let y = g.mul(y, rv)?;
            Ok(g.sum(y))
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-3, "{err:e}");
}
