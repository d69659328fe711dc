//! Finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::{Result, Tensor, TensorError};

/// Default central-difference step.
pub const GRAD_CHECK_H: f64 = 1e-5;

/// Compares the tape gradient of a scalar function against central finite
/// differences, coordinate by coordinate.
///
/// `f` must rebuild the same computation on whatever tape it is given (any
/// randomness inside must be re-seeded per call). Returns the maximum over
/// coordinates of `|a − n| / max(1, |a|, |n|)` where `a` is the tape
/// gradient and `n` the numeric estimate `(f(x+h) − f(x−h)) / 2h`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            reason: "step must be positive".into(),
        });
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone());
        let out = f(&mut tape, x)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads.grad_or_zeros(x, point.shape());

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
