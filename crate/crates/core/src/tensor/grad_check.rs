use super::{Tape, Tensor, Var};
use crate::error::{contract, Result};

/// Central-difference gradient of a scalar function of `x`.
///
/// The quotient divides by the perturbation actually representable in `f32`
/// rather than the nominal `2h`.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(contract("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let hi = (orig as f64 + h) as f32;
        let lo = (orig as f64 - h) as f32;
        probe.data_mut()[i] = hi;
        let plus = f(&probe);
        probe.data_mut()[i] = lo;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.push(((plus - minus) / (hi as f64 - lo as f64)) as f32);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both are zero.
pub fn relative_error(a: &[f32], b: &[f32]) -> f64 {
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Relative error of each input's gradient on its own.
    pub per_input: Vec<f64>,
    /// Relative error of all gradients concatenated into one vector.
    pub overall: f64,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares tape gradients of `build` against central differences for every
/// input.
///
/// `build` receives the inputs as trainable leaves and must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec)
        })
        .collect();

    let mut errors = Vec::with_capacity(inputs.len());
    let mut all_numeric = Vec::new();
    for (which, input) in inputs.iter().enumerate() {
        let mut failure = None;
        let numeric = numeric_gradient(
            |probe| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| tape.leaf(if i == which { probe.clone() } else { t.clone() }))
                    .collect();
                match build(&mut tape, &vars) {
                    Ok(out) => tape.item_f64(out),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            input,
            h,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        errors.push(relative_error(&analytic[which], numeric.data()));
        all_numeric.extend_from_slice(numeric.data());
    }
    Ok(GradCheck {
        per_input: errors,
        overall: relative_error(&analytic.concat(), &all_numeric),
    })
}
