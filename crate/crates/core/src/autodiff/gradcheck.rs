use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matrix::Matrix;
use super::tape::{Tape, Var};

pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Central-difference gradient check.
///
/// `build` receives a fresh tape and one trainable [`Var`] per named
/// parameter (same order as `params`) and must return a 1×1 loss. Relative
/// error per entry is `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`;
/// the floor keeps exactly-zero gradients (key biases under softmax) from
/// turning central-difference round-off into a large ratio.
pub fn grad_check<T, F>(params: &[(String, Matrix<T>)], eps: f64, build: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("grad_check eps must be > 0, got {eps}")));
    }
    let eval = |values: &[Matrix<T>]| -> Result<(f64, Tape<T>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let v = tape.value(loss).item().as_f64();
        Ok((v, tape, vars, loss))
    };

    let mut values: Vec<Matrix<T>> = params.iter().map(|(_, m)| m.clone()).collect();
    let (_, tape, vars, loss) = eval(&values)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix<T>> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let step = T::lit(eps);
    for (p, (name, _)) in params.iter().enumerate() {
        for i in 0..values[p].len() {
            let orig = values[p].as_slice()[i];
            values[p].as_mut_slice()[i] = orig + step;
            let (plus, ..) = eval(&values)?;
            values[p].as_mut_slice()[i] = orig - step;
            let (minus, ..) = eval(&values)?;
            values[p].as_mut_slice()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].as_slice()[i].as_f64();
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check parameter {name} index {i}"),
                });
            }
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
