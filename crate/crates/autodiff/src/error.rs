use crate::Shape;

/// Errors raised by the tape.
///
/// Shape mismatches inside arithmetic are programming errors and panic
/// instead, the same way `ndarray` treats them.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),

    #[error("binding for `{name}` has {got} values, expected {expected}")]
    BindingSize {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("gradient requires a scalar output, got shape {0}")]
    NonScalarOutput(Shape),

    #[error("function value {value} is not finite at {point:?}")]
    NonFinite { value: f64, point: Vec<f64> },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}
