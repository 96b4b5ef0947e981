//! Dense tensors, reverse-mode automatic differentiation, layer primitives,
//! the Adam optimizer, finite-difference gradient checking, and the
//! checkpoint container.
//!
//! Everything is generic over the element type: verification runs at `f64`,
//! training at `f32`.

pub mod adam;
pub mod gradcheck;
pub mod layout;
pub mod matmul;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::grad_check;
pub use layout::LayoutMap;
pub use params::{read_checkpoint, write_checkpoint, ParamStore};
pub use tape::{BoundParams, Gradients, Tape, Var};
pub use tensor::{Element, Tensor};
