//! Central finite-difference gradient checking.
//!
//! Only forward evaluations of the graph are used here, so the numbers are
//! independent of every backward rule they are compared against.

pub mod cases;

use crate::{Result, Tape, Tensor, Var};

/// Finite-difference step used throughout the test suites.
pub const DEFAULT_STEP: f64 = 1e-3;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate of `x`.
pub fn numerical_gradient(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64, h: f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares tape gradients of a scalar graph against finite differences.
///
/// `build` receives a fresh tape with every input recorded as a parameter and
/// must return the scalar root. The result holds one relative error per input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad_tensor(v).into_data()).collect();

    let mut errors = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let mut failure = None;
        let numeric = numerical_gradient(
            input,
            |probe| {
                let mut t = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| t.param(if i == which { probe.clone() } else { x.clone() }))
                    .collect();
                match build(&mut t, &vars) {
                    Ok(r) => t.value(r).item(),
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        errors.push(relative_error(&analytic[which], &numeric));
    }
    Ok(errors)
}
