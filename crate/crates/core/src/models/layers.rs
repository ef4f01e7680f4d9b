use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Affine map `x·W + b` with `W: (in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self { name: name.into(), fan_in, fan_out }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Uniform `±1/√fan_in` for both weight and bias.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let bound = 1.0 / (self.fan_in as f64).sqrt();
        let w = Tensor::uniform([self.fan_in, self.fan_out], -bound, bound, rng).with_requires_grad(true);
        let b = Tensor::uniform([self.fan_out], -bound, bound, rng).with_requires_grad(true);
        store.insert(self.w(), w)?;
        store.insert(self.b(), b)
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.fan_in {
            return Err(Error::Shape(format!("{} expects (_, {}), got {shape:?}", self.name, self.fan_in)));
        }
        x.matmul(g.param(store, &self.w())?)?.add(g.param(store, &self.b())?)
    }
}

/// Pre-activation residual block with feature-wise modulation:
/// `h = W1·silu(x)`, `h ← h⊙(1+γ) + β` where `[γ, β] = W_c·c`,
/// `out = x + W2·silu(h)`.
///
/// The conditioning batch may be 1 (shared by every row of `x`) or match `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmBlock {
    pub fc1: Linear,
    pub film: Linear,
    pub fc2: Linear,
    pub width: usize,
}

impl FilmBlock {
    pub fn new(name: &str, width: usize, cond_dim: usize) -> Self {
        Self {
            fc1: Linear::new(format!("{name}.fc1"), width, width),
            film: Linear::new(format!("{name}.film"), cond_dim, 2 * width),
            fc2: Linear::new(format!("{name}.fc2"), width, width),
            width,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.fc1.init(store, rng)?;
        self.film.init(store, rng)?;
        self.fc2.init(store, rng)
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        cond: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let h = self.fc1.forward(g, store, x.silu())?;
        let film = self.film.forward(g, store, cond)?;
        let gamma = film.slice(1, 0, self.width)?;
        let beta = film.slice(1, self.width, self.width)?;
        let h = h.mul(gamma.offset(T::one()))?.add(beta)?;
        let h = self.fc2.forward(g, store, h.silu())?;
        x.add(h)
    }
}

/// Input projection, conditioned residual blocks, output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmStack {
    pub input: Linear,
    pub blocks: Vec<FilmBlock>,
}

impl FilmStack {
    pub fn new(name: &str, in_dim: usize, width: usize, depth: usize, cond_dim: usize) -> Self {
        Self {
            input: Linear::new(format!("{name}.in"), in_dim, width),
            blocks: (0..depth).map(|i| FilmBlock::new(&format!("{name}.block{i}"), width, cond_dim)).collect(),
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.input.init(store, rng)?;
        self.blocks.iter().try_for_each(|b| b.init(store, rng))
    }

    /// Returns `silu` of the last hidden state.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        cond: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let mut h = self.input.forward(g, store, x)?;
        for b in &self.blocks {
            h = b.forward(g, store, h, cond)?;
        }
        Ok(h.silu())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_shapes_and_values() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new("l", 2, 3);
        lin.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Graph::new();
        let x = g.constant(Tensor::new([1, 2], vec![1.0, 2.0]).unwrap());
        let y = lin.forward(&g, &store, x).unwrap().value();
        let w = store.get("l.w").unwrap().data().to_vec();
        let b = store.get("l.b").unwrap().data().to_vec();
        for j in 0..3 {
            assert!((y.data()[j] - (w[j] + 2.0 * w[3 + j] + b[j])).abs() < 1e-15);
        }
        assert!(lin.forward(&g, &store, g.constant(Tensor::zeros([1, 3]))).is_err());
    }

    #[test]
    fn film_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let block = FilmBlock::new("b", 5, 3);
        block.init(&mut store, &mut rng).unwrap();
        let x = Tensor::<f64>::randn([4, 5], &mut rng);
        let c = Tensor::<f64>::randn([1, 3], &mut rng);
        let rep = check_gradients(&store, 1e-5, 64, |g, s| {
            let y = block.forward(g, s, g.constant(x.clone()), g.constant(c.clone()))?;
            Ok(y.square().sum())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
