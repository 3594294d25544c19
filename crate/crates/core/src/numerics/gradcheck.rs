use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Tape, Tensor, Var};

/// Pins a closure to the higher-ranked signature the checkers expect, so it
/// can be bound to a variable before use.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    f
}

/// Central-difference estimate of the gradient of `f` at `inputs`.
pub fn central_difference<F>(f: &F, inputs: &[Tensor], eps: f64) -> Result<Vec<Tensor>, NumericsError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::BadStep(eps));
    }
    let mut out = Vec::with_capacity(inputs.len());
    let mut point = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape().to_vec());
        for j in 0..inputs[i].numel() {
            let orig = point[i].data()[j];
            point[i].data_mut()[j] = orig + eps;
            let plus = eval(f, &point)?;
            point[i].data_mut()[j] = orig - eps;
            let minus = eval(f, &point)?;
            point[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&tape, &vars);
    let shape = y.shape();
    if shape.iter().product::<usize>() != 1 {
        return Err(NumericsError::NonScalarOutput(shape));
    }
    Ok(y.item())
}

/// Maximum over all input coordinates of
/// `|autodiff − central difference| / max(1, |central difference|)`.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::BadStep(eps));
    }
    let a = eval(&f, inputs)?;
    let b = eval(&f, inputs)?;
    if a.to_bits() != b.to_bits() {
        return Err(NumericsError::NonDeterministic);
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = f(&tape, &vars);
    let grads = tape.backward(y)?;
    let numeric = central_difference(&f, inputs, eps)?;
    let mut worst: f64 = 0.0;
    for (var, fd) in vars.iter().zip(&numeric) {
        let ad = grads.get_or_zeros(*var);
        for (x, y) in ad.data().iter().zip(fd.data()) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Like [`finite_difference_check`], but compares only up to `per_input`
/// coordinates of each input, chosen by `seed`. Inputs with at most
/// `per_input` elements are checked exhaustively.
pub fn sampled_gradient_check<F>(f: F, inputs: &[Tensor], eps: f64, per_input: usize, seed: u64) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::BadStep(eps));
    }
    let a = eval(&f, inputs)?;
    let b = eval(&f, inputs)?;
    if a.to_bits() != b.to_bits() {
        return Err(NumericsError::NonDeterministic);
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = f(&tape, &vars);
    let grads = tape.backward(y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let ad = grads.get_or_zeros(*var);
        let n = inputs[i].numel();
        let coords: Vec<usize> =
            if n <= per_input { (0..n).collect() } else { rand::seq::index::sample(&mut rng, n, per_input).into_vec() };
        for j in coords {
            let orig = point[i].data()[j];
            point[i].data_mut()[j] = orig + eps;
            let plus = eval(&f, &point)?;
            point[i].data_mut()[j] = orig - eps;
            let minus = eval(&f, &point)?;
            point[i].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max((ad.data()[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn([5, 4], 1.0, &mut rng);
        let err = finite_difference_check(|_, v| v[0].square().sum(), &[x], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_step_rejected() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(
            finite_difference_check(|_, v| v[0].square().sum(), &[x], 0.0),
            Err(NumericsError::BadStep(_))
        ));
    }

    #[test]
    fn non_deterministic_function_rejected() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let counter = AtomicU64::new(0);
        let f = scalar_fn(|t, v| {
            let k = counter.fetch_add(1, Ordering::Relaxed) as f64;
            v[0].add(t.constant(Tensor::scalar(k))).sum()
        });
        assert!(matches!(
            finite_difference_check(f, &[Tensor::scalar(1.0)], 1e-5),
            Err(NumericsError::NonDeterministic)
        ));
    }

    #[test]
    fn matrix_vector_norm_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::randn([4, 4], 1.0, &mut rng);
        let x = Tensor::randn([4, 1], 1.0, &mut rng);
        let f = scalar_fn(|_, v| v[0].matmul(v[1]).square().sum());
        let err = finite_difference_check(f, &[w.clone(), x.clone()], 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
