//! Central finite-difference verification of analytic gradients.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::par;

/// Builds a scalar output from the given input variables.
pub trait ScalarFn: Fn(&mut Graph, &[Var]) -> Result<Var> + Sync + Send {}
impl<F> ScalarFn for F where F: Fn(&mut Graph, &[Var]) -> Result<Var> + Sync + Send {}

fn evaluate<F: ScalarFn + ?Sized>(f: &F, inputs: &[Tensor], requires_grad: bool) -> Result<(Graph, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone(), requires_grad))
        .collect();
    let out = f(&mut g, &vars)?;
    if g.shape(out) != (1, 1) {
        return Err(Error::invalid(format!(
            "grad_check needs a scalar output, got {:?}",
            g.shape(out)
        )));
    }
    Ok((g, vars, out))
}

fn probe<F: ScalarFn + ?Sized>(f: &F, inputs: &[Tensor]) -> Result<f64> {
    let (g, _, out) = evaluate(f, inputs, false)?;
    let v = g.value(out).item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("grad_check probe".into()))
    }
}

/// Max over every coordinate of every input of
/// `|analytic − central| / max(1, |analytic|, |central|)`.
pub fn grad_check_many<F: ScalarFn + ?Sized>(f: &F, inputs: &[Tensor], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside (0, 1e-3]")));
    }
    let (g, vars, out) = evaluate(f, inputs, true)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |k| (t, k)))
        .collect();

    let errors: Vec<Result<f64>> = par::map_slice(&coords, |&(t, k)| {
        let mut shifted = inputs.to_vec();
        let x0 = inputs[t].data()[k];
        shifted[t].data_mut()[k] = x0 + epsilon;
        let plus = probe(f, &shifted)?;
        shifted[t].data_mut()[k] = x0 - epsilon;
        let minus = probe(f, &shifted)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[t].data()[k];
        Ok((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()))
    });

    let mut worst = 0.0f64;
    for e in errors {
        worst = worst.max(e?);
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync + Send,
{
    grad_check_many(&|g: &mut Graph, v: &[Var]| f(g, v[0]), std::slice::from_ref(point), epsilon)
}
