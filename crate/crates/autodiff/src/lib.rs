//! Dense tensors, a recording tape for reverse-mode gradients, and Adam.
//!
//! ```
//! use sleepformer_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let w = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
//! let x = tape.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]));
//! let loss = w.matmul(x).unwrap().sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
//! ```

mod adam;
mod ops;
mod real;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use ops::NORM_EPS;
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward() needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
}
