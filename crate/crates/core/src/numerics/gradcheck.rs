use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar function of a list of tensors with an analytic gradient.
pub trait Differentiable {
    fn value(&self, params: &[Tensor]) -> Result<f64>;
    fn value_and_grad(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>;
}

/// Adapts a closure that records a scalar on a fresh [`Tape`] from one leaf
/// per parameter.
pub struct TapeFn<F>(pub F);

impl<F> TapeFn<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fn record(&self, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = params.iter().map(|p| tape.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
        let out = (self.0)(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Shape(format!("expected a scalar, got {:?}", tape.value(out).shape())));
        }
        Ok((tape, vars, out))
    }
}

impl<F> Differentiable for TapeFn<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fn value(&self, params: &[Tensor]) -> Result<f64> {
        let (tape, _, out) = self.record(params)?;
        Ok(tape.value(out).data()[0])
    }

    fn value_and_grad(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let (tape, vars, out) = self.record(params)?;
        let grads = tape.backward(out, 1.0)?;
        Ok((tape.value(out).data()[0], vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Upper bound on checked coordinates; above it a seeded sample is drawn.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: 400, seed: 0 }
    }
}

/// Largest `|g_ad - g_fd| / max(1, |g_fd|)` over the checked coordinates,
/// where `g_fd` is a central finite difference.
pub fn gradient_check(f: &impl Differentiable, params: &[Tensor], opts: GradCheckOptions) -> Result<f64> {
    let (_, analytic) = f.value_and_grad(params)?;
    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();

    let coords: Vec<usize> = if total <= opts.max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut v = sample(&mut rng, total, opts.max_coords.max(200).min(total)).into_vec();
        v.sort_unstable();
        v
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for flat in coords {
        let (mut p, mut i) = (0, flat);
        while i >= sizes[p] {
            i -= sizes[p];
            p += 1;
        }
        let original = work[p].data()[i];
        work[p].data_mut()[i] = original + opts.step;
        let up = f.value(&work)?;
        work[p].data_mut()[i] = original - opts.step;
        let down = f.value(&work)?;
        work[p].data_mut()[i] = original;

        let numeric = (up - down) / (2.0 * opts.step);
        let exact = analytic[p].data()[i];
        if !numeric.is_finite() || !exact.is_finite() {
            return Err(Error::Numerics(format!("non-finite gradient at parameter {p}[{i}]")));
        }
        worst = worst.max((exact - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
