use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::seed;

/// A named parameter tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>, trainable: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            grad,
            trainable,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, trainable: bool) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n], trainable)
    }

    pub fn xavier(name: impl Into<String>, shape: Vec<usize>, trainable: bool, seed: u64) -> Self {
        let value = xavier_init(&shape, seed);
        Self::new(name, shape, value, trainable)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Fan-in and fan-out for `[out, in]` dense and `[out, kh, kw, in]` conv layouts.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, rest @ .., inp] => {
            let receptive: usize = rest.iter().product();
            (inp * receptive, out * receptive)
        }
    }
}

/// Glorot-uniform draws: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
/// so the variance is `2 / (fan_in + fan_out)`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Vec<f64> {
    let (fan_in, fan_out) = fans(shape);
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut rng = seed::rng(seed);
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

/// SHA-256 over names, shapes and little-endian values.
pub fn fingerprint<'a>(params: impl IntoIterator<Item = &'a Param>) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for d in &p.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &p.value {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Anything that owns parameters.
pub trait HasParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn fingerprint(&self) -> String {
        fingerprint(self.params())
    }

    fn trainable_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.len())
            .sum()
    }
}
