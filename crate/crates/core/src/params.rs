//! Named parameter registry and the small layer building blocks shared by
//! the fusion module and the translator.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Gradients, Mat, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

/// Which bound parameters the tape differentiates with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    Trainable,
    All,
    None,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.trainable = trainable;
        }
    }

    pub fn num_scalars(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Registers every parameter as a borrowed leaf on `tape`.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>, mode: GradMode) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let rg = match mode {
                    GradMode::All => true,
                    GradMode::Trainable => p.trainable,
                    GradMode::None => false,
                };
                tape.borrowed(&p.value, rg)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients, `None` where the tape did not reach it.
    pub fn grads(&self, grads: &Gradients) -> Vec<Option<Mat>> {
        self.vars.iter().map(|v| grads.get(*v).cloned()).collect()
    }
}

pub fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Mat {
    Mat::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Mat {
    Mat::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

/// Dense layer `y = x·Wᵀ + b` with `W` stored as `out × in`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        trainable: bool,
    ) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, (d_out, d_in), bound),
            trainable,
        );
        let bias =
            bias.then(|| store.add(format!("{name}.bias"), Mat::zeros((1, d_out)), trainable));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let y = tape.matmul_nt(x, bound.var(self.weight));
        match self.bias {
            Some(b) => tape.add(y, bound.var(b)),
            None => y,
        }
    }
}

/// Stack of [`Linear`] layers with GeLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &[usize],
        trainable: bool,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Linear::new(
                    store,
                    rng,
                    &format!("{name}.{i}"),
                    w[0],
                    w[1],
                    true,
                    trainable,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bound, h);
            if i + 1 < n {
                h = tape.gelu(h);
            }
        }
        h
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("empty mlp")
    }
}
