// `!(x >= lo)` is used on purpose so NaN is rejected along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod gesture;
pub mod io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod recognizer;
pub mod scene_sim;
pub mod signal;
pub mod stream;

pub use error::{Error, Result};
pub use gesture::{GestureClass, GestureKind, SpanKind};
pub use par::Parallelism;
