use crate::error::{Error, Result};
use crate::tensor::{Grads, Graph, RngState, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

/// Tape handles for every parameter of a store, valid for one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, tensor.with_requires_grad(true)));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Put every parameter on the tape as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.entries.iter().map(|(_, t)| g.param(t.clone())).collect(),
        }
    }

    /// Put every parameter on the tape as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.entries.iter().map(|(_, t)| g.constant(t.clone())).collect(),
        }
    }

    /// Copy gradients from a backward pass into each tensor's `grad`.
    pub fn absorb_grads(&mut self, grads: &Grads, bound: &Bound) -> Result<()> {
        for ((_, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            t.set_grad(grads.wrt(v))?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.zero_grad());
    }

    /// Replace values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Contract(format!(
                "parameter count {} does not match {}",
                other.len(),
                self.len()
            )));
        }
        for ((name, t), (oname, o)) in self.entries.iter_mut().zip(&other.entries) {
            if name != oname || t.shape() != o.shape() {
                return Err(Error::Contract(format!(
                    "parameter {oname} {:?} does not match {name} {:?}",
                    o.shape(),
                    t.shape()
                )));
            }
            *t = o.clone().with_requires_grad(true);
        }
        Ok(())
    }
}

/// Glorot-uniform `[fan_in, fan_out]` matrix.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    Tensor::uniform(&[fan_in, fan_out], -limit, limit, rng)
}

/// He-uniform tensor for a relu layer with the given fan-in.
pub fn kaiming(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor {
    let limit = (6.0 / fan_in as f32).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

/// Outcome of [`sampled_gradient_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Norm-wise relative error over the checked entries.
    pub rel_error: f64,
    pub checked: usize,
    /// Sampled entries rejected because `[x - eps, x + eps]` straddles a kink.
    pub skipped_kinks: usize,
}

/// Central-difference check of `n` randomly chosen scalar parameters of
/// `store` for the scalar function `f`.
///
/// Networks with relu and max pooling are only piecewise smooth. An entry whose
/// two one-sided slopes disagree by more than 1% has a kink inside the
/// difference interval, where a central difference does not estimate the
/// derivative; such entries are redrawn (at most `20 n` draws in total).
/// A wrong gradient on a smooth piece still shows up in the error.
pub fn sampled_gradient_check<F>(store: &ParamStore, f: F, n: usize, eps: f32, rng: &mut RngState) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let loss = f(&mut g, &bound)?;
    let f0 = g.scalar(loss);
    let grads = g.backward(loss)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let bound = s.bind_frozen(&mut g);
        let out = f(&mut g, &bound)?;
        Ok(g.scalar(out))
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut work = store.clone();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for _ in 0..20 * n {
        if analytic.len() == n {
            break;
        }
        let id = ids[rng.index_in(0, ids.len())];
        let i = rng.index_in(0, store.get(id).numel());
        let base = store.get(id).data()[i];
        let (hi, lo) = (base + eps, base - eps);
        work.get_mut(id).data_mut()[i] = hi;
        let fp = eval(&work)?;
        work.get_mut(id).data_mut()[i] = lo;
        let fm = eval(&work)?;
        work.get_mut(id).data_mut()[i] = base;
        let (up, down) = ((fp - f0) / (hi - base) as f64, (f0 - fm) / (base - lo) as f64);
        if (up - down).abs() > 0.01 * up.abs().max(down.abs()) + 1e-3 {
            skipped += 1;
            continue;
        }
        analytic.push(grads.wrt(bound.var(id))[i]);
        numeric.push((fp - fm) / (hi as f64 - lo as f64));
    }
    Ok(GradCheckReport {
        rel_error: crate::tensor::relative_error(&analytic, &numeric),
        checked: analytic.len(),
        skipped_kinks: skipped,
    })
}
