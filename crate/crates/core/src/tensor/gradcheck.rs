use super::{Graph, RngState, Tensor, Var};
use crate::error::Result;

/// Norm-wise relative error `||a - n|| / max(||a||, ||n||)`; zero when both vanish.
///
/// Element-wise ratios are not used: for layers where every output depends on
/// every input, single-precision rounding alone puts individual central
/// differences about 1e-3 away from the exact derivative at a step of 1e-3.
pub fn relative_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference estimate of the gradient of scalar `f` at `x`.
pub fn numeric_gradient<F>(f: F, x: &Tensor, eps: f32) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        Ok(g.scalar(out))
    };
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let base = x.data()[i];
        let (hi, lo) = (base + eps, base - eps);
        let mut plus = x.clone();
        plus.data_mut()[i] = hi;
        let mut minus = x.clone();
        minus.data_mut()[i] = lo;
        out.push((eval(plus)? - eval(minus)?) / (hi as f64 - lo as f64));
    }
    Ok(out)
}

/// Compares reverse-mode gradients of the scalar function `f` at `x` with
/// central differences of step `eps` and returns the relative error
/// (see [`relative_error`]).
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f32) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    let analytic = g.backward(loss)?.wrt(xv);
    let numeric = numeric_gradient(&f, x, eps)?;
    Ok(relative_error(&analytic, &numeric))
}

/// `sum(y * r)` for a fixed pseudo-random `r`, so every output element matters.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = g.constant(Tensor::randn(&shape, 1.0, &mut RngState::new(seed)));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Gaussian sample with every entry at least 0.05 away from zero, so kinks
/// at the origin stay outside the difference stencil.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut x = Tensor::randn(shape, 1.0, &mut RngState::new(seed));
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f32.copysign(*v);
        }
    }
    x
}

/// Scalar function of one tensor input.
pub type Unary = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// Every differentiable op, checked on inputs no larger than [2, 3, 8, 8].
pub fn op_suite() -> Vec<(&'static str, Vec<usize>, Unary)> {
    let fixed = |shape: &[usize], seed: u64| Tensor::randn(shape, 0.5, &mut RngState::new(seed));
    vec![
        ("add", vec![2, 3, 4], Box::new(move |g, x| {
            let b = g.constant(fixed(&[2, 3, 4], 1));
            let y = g.add(x, b)?;
            project(g, y, 100)
        })),
        ("sub", vec![2, 3, 4], Box::new(move |g, x| {
            let b = g.constant(fixed(&[2, 3, 4], 2));
            let y = g.sub(b, x)?;
            project(g, y, 101)
        })),
        ("mul", vec![2, 3, 4], Box::new(|g, x| {
            let y = g.mul(x, x)?;
            project(g, y, 102)
        })),
        ("scale", vec![5], Box::new(|g, x| {
            let y = g.scale(x, -2.5);
            project(g, y, 103)
        })),
        ("add_broadcast", vec![2, 3, 4], Box::new(move |g, x| {
            let b = g.constant(fixed(&[3], 3));
            let y = g.add_broadcast(x, b, 1)?;
            let y = g.mul(y, y)?;
            project(g, y, 104)
        })),
        ("add_broadcast(bias)", vec![3], Box::new(move |g, b| {
            let x = g.constant(fixed(&[2, 3, 4], 4));
            let y = g.add_broadcast(x, b, 1)?;
            let y = g.mul(y, y)?;
            project(g, y, 105)
        })),
        ("mul_broadcast", vec![4], Box::new(move |g, b| {
            let x = g.constant(fixed(&[2, 3, 4], 5));
            let y = g.mul_broadcast(x, b, 2)?;
            project(g, y, 106)
        })),
        ("relu", vec![2, 3, 8, 8], Box::new(|g, x| {
            let y = g.relu(x);
            project(g, y, 107)
        })),
        ("sigmoid", vec![2, 3, 4], Box::new(|g, x| {
            let y = g.sigmoid(x);
            project(g, y, 108)
        })),
        ("matmul", vec![3, 4], Box::new(move |g, x| {
            let b = g.constant(fixed(&[4, 2], 6));
            let y = g.matmul(x, b)?;
            let yt = g_transpose(g, y)?;
            let z = g.matmul(yt, x)?;
            project(g, z, 109)
        })),
        ("bmm", vec![2, 3, 4], Box::new(move |g, x| {
            let b = g.constant(fixed(&[2, 4, 5], 7));
            let y = g.bmm(x, b, false)?;
            let z = g.bmm(x, x, true)?;
            let s1 = project(g, y, 110)?;
            let s2 = project(g, z, 111)?;
            g.add(s1, s2)
        })),
        ("softmax", vec![2, 3, 4], Box::new(|g, x| {
            let y = g.softmax(x, 1)?;
            project(g, y, 112)
        })),
        ("layer_norm", vec![2, 3, 8], Box::new(move |g, x| {
            let gamma = g.constant(fixed(&[8], 8));
            let beta = g.constant(fixed(&[8], 9));
            let y = g.layer_norm(x, gamma, beta, 2, 1e-5)?;
            project(g, y, 113)
        })),
        ("layer_norm(mid axis)", vec![2, 5, 3], Box::new(|g, x| {
            let y = g.normalize(x, 1, 1e-5)?;
            project(g, y, 114)
        })),
        ("linear", vec![2, 3, 4], Box::new(move |g, x| {
            let w = g.constant(fixed(&[4, 6], 10));
            let b = g.constant(fixed(&[6], 11));
            let y = g.linear(x, w, Some(b))?;
            project(g, y, 115)
        })),
        ("concat", vec![2, 3, 4], Box::new(move |g, x| {
            let o = g.constant(fixed(&[2, 2, 4], 12));
            let y = g.concat(&[o, x, x], 1)?;
            project(g, y, 116)
        })),
        ("reshape+permute", vec![2, 3, 4], Box::new(|g, x| {
            let y = g.permute(x, &[2, 0, 1])?;
            let y = g.reshape(y, &[8, 3])?;
            project(g, y, 117)
        })),
        ("patchify", vec![2, 3, 8, 8], Box::new(|g, x| {
            let y = g.patchify(x, 4)?;
            project(g, y, 118)
        })),
        ("unpatchify", vec![2, 4, 24], Box::new(|g, x| {
            let y = g.unpatchify(x, 2, 3, 4, 8)?;
            project(g, y, 119)
        })),
        ("conv2d(x)", vec![2, 3, 8, 8], Box::new(move |g, x| {
            let w = g.constant(fixed(&[4, 3, 3, 3], 13));
            let b = g.constant(fixed(&[4], 14));
            let y = g.conv2d(x, w, Some(b), 1, 1)?;
            project(g, y, 120)
        })),
        ("conv2d(w)", vec![4, 3, 3, 3], Box::new(move |g, w| {
            let x = g.constant(fixed(&[2, 3, 8, 8], 15));
            let y = g.conv2d(x, w, None, 2, 1)?;
            project(g, y, 121)
        })),
        ("conv_transpose2d(x)", vec![2, 3, 4, 4], Box::new(move |g, x| {
            let w = g.constant(fixed(&[3, 2, 2, 2], 16));
            let y = g.conv_transpose2d(x, w, None, 2, 0)?;
            project(g, y, 122)
        })),
        ("conv_transpose2d(w)", vec![3, 2, 3, 3], Box::new(move |g, w| {
            let x = g.constant(fixed(&[2, 3, 4, 4], 17));
            let b = g.constant(fixed(&[2], 18));
            let y = g.conv_transpose2d(x, w, Some(b), 2, 1)?;
            project(g, y, 123)
        })),
        ("maxpool2d", vec![2, 3, 8, 8], Box::new(|g, x| {
            let y = g.maxpool2d(x, 2, 2)?;
            project(g, y, 124)
        })),
        ("mean", vec![2, 3, 4], Box::new(|g, x| {
            let y = g.mul(x, x)?;
            Ok(g.mean(y))
        })),
        ("l1_loss", vec![2, 3, 4], Box::new(move |g, x| {
            let target = g.constant(fixed(&[2, 3, 4], 19));
            g.l1_loss(x, target)
        })),
        ("mse_loss", vec![2, 3, 4], Box::new(move |g, x| {
            let target = g.constant(fixed(&[2, 3, 4], 20));
            g.mse_loss(x, target)
        })),
    ]
}

fn g_transpose(g: &mut Graph, y: Var) -> Result<Var> {
    g.permute(y, &[1, 0])
}

/// Check every op of [`op_suite`] and return `(name, relative error)` pairs.
pub fn run_op_suite(eps: f32) -> Result<Vec<(&'static str, f64)>> {
    op_suite()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape, f))| {
            let x = away_from_zero(&shape, 500 + i as u64);
            Ok((name, finite_difference_check(&f, &x, eps)?))
        })
        .collect()
}
