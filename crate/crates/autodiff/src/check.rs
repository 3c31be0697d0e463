use crate::{AdError, Expr, Shape, Tape};

/// Largest relative disagreement between the tape gradient of `f` at
/// `point` and a central difference with the given `step`, taken over
/// coordinates as `|ad - fd| / (|fd| + 1e-12)`.
///
/// `f` receives the point as a vector variable and must return a scalar.
pub fn finite_difference_check<F>(f: F, point: &[f64], step: f64) -> Result<f64, AdError>
where
    F: for<'t> Fn(Expr<'t>) -> Expr<'t>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(AdError::InvalidStep(step));
    }
    let eval = |x: &[f64]| -> Result<f64, AdError> {
        let tape = Tape::new();
        let v = tape.var("x", x.to_vec(), Shape::vector(x.len()));
        let y = f(v);
        let value = y.item();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(AdError::NonFinite { value, point: x.to_vec() })
        }
    };

    let tape = Tape::new();
    let x = tape.var("x", point.to_vec(), Shape::vector(point.len()));
    let y = f(x);
    if !y.item().is_finite() {
        return Err(AdError::NonFinite { value: y.item(), point: point.to_vec() });
    }
    let ad = tape.gradient(y, &[x], false)?[0].value();

    let mut worst = 0.0_f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = eval(&probe)?;
        probe[i] = point[i] - step;
        let down = eval(&probe)?;
        probe[i] = point[i];
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((ad[i] - fd).abs() / (fd.abs() + 1e-12));
    }
    Ok(worst)
}
