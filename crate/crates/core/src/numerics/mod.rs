//! Dense tensors, tape-based reverse-mode differentiation, AdamW and the
//! checkpoint payload format.

mod gradcheck;
pub mod nn;
mod optim;
mod patches;
mod payload;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, finite_difference_check, sampled_gradient_check, scalar_fn};
pub use nn::{ParamGrads, ParamId, ParamStore};
pub use optim::{adamw_update, AdamW, AdamWConfig, OptimizerState};
pub use patches::{patchify, unpatchify};
pub use payload::{read_payload, write_payload, PayloadEntry, PAYLOAD_MAGIC, PAYLOAD_VERSION};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backprop requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value produced by kernel `{op}`")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient reached frozen parameter `{0}`")]
    FrozenGradient(String),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("function is not deterministic: two evaluations at the same point differ")]
    NonDeterministic,
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `c[m×n] += a[m×k] · b[k×n]` with arbitrary strides on `a` and `b`;
/// `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: callers pass buffers sized for the given dimensions and strides
    // (all call sites derive the strides from the tensors' own shapes), and
    // `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cosine similarity of two vectors. Zero-norm inputs are an error.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(NumericsError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(NumericsError::ZeroNorm)));
    }
}
