use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Sinusoidal timestep embedding.
///
/// Layout: the first `dim/2` entries are `sin(t·fᵢ)`, the last `dim/2` are
/// `cos(t·fᵢ)`, with frequencies `fᵢ = 10000^(−2i/dim)`.
pub fn sinusoidal_embedding<T: Scalar>(t: usize, dim: usize) -> Result<Tensor<T>> {
    Ok(Tensor::from_vec(embedding_row(t, dim)?))
}

/// One embedding row per timestep, shape `(len, dim)`.
pub fn sinusoidal_embedding_batch<T: Scalar>(ts: &[usize], dim: usize) -> Result<Tensor<T>> {
    if ts.is_empty() {
        return Err(Error::Empty("timesteps"));
    }
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(embedding_row::<T>(t, dim)?);
    }
    Tensor::new(vec![ts.len(), dim], data)
}

fn embedding_row<T: Scalar>(t: usize, dim: usize) -> Result<Vec<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dimension {dim} must be even and positive")));
    }
    let half = dim / 2;
    let t = t as f64;
    let freqs: Vec<f64> = (0..half).map(|i| 10000f64.powf(-2.0 * i as f64 / dim as f64)).collect();
    let sin = freqs.iter().map(|f| T::lit((t * f).sin()));
    let cos = freqs.iter().map(|f| T::lit((t * f).cos()));
    Ok(sin.chain(cos).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_timestep() {
        let e: Tensor<f64> = sinusoidal_embedding(0, 8).unwrap();
        assert!(e.data()[..4].iter().all(|&v| v == 0.0));
        assert!(e.data()[4..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn closed_form_dim_four() {
        let e: Tensor<f64> = sinusoidal_embedding(1, 4).unwrap();
        let f1 = 10000f64.powf(-0.5);
        let expected = [1f64.sin(), f1.sin(), 1f64.cos(), f1.cos()];
        for (a, b) in e.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(sinusoidal_embedding::<f64>(3, 5).is_err());
    }

    #[test]
    fn bounded_for_large_timesteps() {
        for t in [1, 17, 999, 1000, 123_456] {
            let e: Tensor<f64> = sinusoidal_embedding(t, 64).unwrap();
            assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
