//! Reverse-mode automatic differentiation on a dynamically shaped tape.
//!
//! Every operation on an [`Expr`] appends a node to its [`Tape`] and is
//! evaluated immediately. [`Tape::gradient`] runs the backward pass by
//! recording vector-Jacobian products as new nodes, so a gradient taken
//! with `create_graph = true` can be differentiated again.
//!
//! ```
//! use vis_autodiff::{Shape, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var("x", vec![2.0], Shape::scalar());
//! let dy = tape.gradient(x.powf(3.0), &[x], true).unwrap()[0];
//! let d2y = tape.gradient(dy, &[x], false).unwrap()[0];
//! assert_eq!(d2y.item(), 12.0);
//! ```

mod check;
mod error;
mod ops;
mod shape;
mod tape;

pub use check::finite_difference_check;
pub use error::AdError;
pub use shape::Shape;
pub use tape::{Bindings, Expr, Tape};
