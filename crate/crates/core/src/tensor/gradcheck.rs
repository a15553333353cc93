use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over all input scalars of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    /// (input index, element index) of the worst scalar
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares tape gradients of the scalar function `f` against central
/// differences `(f(x+h) − f(x−h)) / 2h` for every scalar of every input.
///
/// `f` receives a fresh tape and the inputs recorded on it, in order.
pub fn finite_difference_check<S, F>(
    f: F,
    inputs: &[Tensor<S>],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("step h must be positive, got {h}")));
    }
    let evaluate = |values: &[Tensor<S>], track: bool| -> Result<(Tape<S>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(track)))
            .collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::contract("gradient check needs a scalar function"));
        }
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = evaluate(inputs, true)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.to_f64_lossy()).collect(),
            None => vec![0.0; tape.value(v).len()],
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    let mut probe: Vec<Tensor<S>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let x = input.data()[ei].to_f64_lossy();
            probe[ti].data_mut()[ei] = S::from_f64_lossy(x + h);
            let (t_plus, _, o_plus) = evaluate(&probe, false)?;
            probe[ti].data_mut()[ei] = S::from_f64_lossy(x - h);
            let (t_minus, _, o_minus) = evaluate(&probe, false)?;
            probe[ti].data_mut()[ei] = input.data()[ei];

            let numeric = (t_plus.value(o_plus).item().to_f64_lossy()
                - t_minus.value(o_minus).item().to_f64_lossy())
                / (2.0 * h);
            let a = analytic[ti][ei];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, ei));
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
