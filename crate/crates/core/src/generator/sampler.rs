use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

use super::GeneratorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 50, seed: 0 }
    }
}

impl SamplerConfig {
    /// The starting noise for `rows × cols` tokens.
    pub fn noise(&self, rows: usize, cols: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Tensor::randn([rows, cols], 1.0, &mut rng)
    }
}

/// Explicit Euler from `t = 0` (noise) to `t = 1` with `cfg.steps` equal
/// steps of the field `velocity(x, t)`.
pub fn euler_integrate<F>(rows: usize, cols: usize, cfg: &SamplerConfig, mut velocity: F) -> Result<Tensor, GeneratorError>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor, GeneratorError>,
{
    if cfg.steps == 0 {
        return Err(GeneratorError::Config("sampler needs at least one step".into()));
    }
    let mut x = cfg.noise(rows, cols);
    let dt = 1.0 / cfg.steps as f64;
    for k in 0..cfg.steps {
        let u = velocity(&x, k as f64 * dt)?;
        if u.shape() != x.shape() {
            return Err(GeneratorError::Shape(format!("velocity {:?} for state {:?}", u.shape(), x.shape())));
        }
        for (xi, ui) in x.data_mut().iter_mut().zip(u.data()) {
            *xi += dt * ui;
        }
        if !x.is_finite() {
            return Err(GeneratorError::NonFiniteState(k));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_exact_for_any_step_count() {
        let c = [0.5, -1.25, 2.0];
        let field = |x: &Tensor, _t: f64| Ok(Tensor::new(x.shape().to_vec(), c.to_vec()).unwrap());
        let eps = SamplerConfig { steps: 1, seed: 3 }.noise(1, 3);
        for steps in [1, 2, 7, 50] {
            let x = euler_integrate(1, 3, &SamplerConfig { steps, seed: 3 }, field).unwrap();
            for i in 0..3 {
                assert!((x.data()[i] - (eps.data()[i] + c[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_field_error_halves_with_steps() {
        // dx/dt = x from x0 gives x0·e; Euler gives x0·(1 + 1/n)^n.
        let x0 = SamplerConfig { steps: 1, seed: 1 }.noise(1, 1).item();
        let err = |n: usize| {
            let x = euler_integrate(1, 1, &SamplerConfig { steps: n, seed: 1 }, |x, _| Ok(x.clone())).unwrap();
            (x.item() - x0 * std::f64::consts::E).abs()
        };
        let ratio = err(100) / err(200);
        assert!((ratio - 2.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn non_finite_state_reports_step() {
        let r = euler_integrate(1, 1, &SamplerConfig { steps: 5, seed: 0 }, |x, t| {
            Ok(if t >= 0.4 { x.map(|_| f64::INFINITY) } else { x.clone() })
        });
        assert!(matches!(r, Err(GeneratorError::NonFiniteState(2))));
        assert!(euler_integrate(1, 1, &SamplerConfig { steps: 0, seed: 0 }, |x, _| Ok(x.clone())).is_err());
    }
}
