//! Dense-array substrate: tensors, seeded randomness, initialization,
//! elementwise kernels and the optimizer stack.

pub mod init;
pub mod ops;
pub mod optim;
pub mod params;
mod rng;
mod tensor;

pub use init::{init_params, InitScheme};
pub use optim::{adam_step, Adam, AdamState, SchedulerDecision, SchedulerState};
pub use params::{ParamKind, ParamMut, ParamRef, Parameterized};
pub use rng::Rng;
pub use tensor::{check_finite, Tensor};
