//! Minimal reverse-mode autodiff engine, optimizer and gradient checking.

mod gemm;
pub mod gradcheck;
pub mod optim;
pub mod tape;

pub use gradcheck::{central_difference, gradient_check, relative_error, GradCheckReport};
pub use optim::{Sgd, StepLrSchedule};
pub use tape::{Gradients, Tape, Var};
