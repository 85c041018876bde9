//! Small dense reverse-mode autodiff core in double precision.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckOptions, GradCheckReport, REL_ERROR_FLOOR};
pub use optim::{optimizer_step, AdamConfig};
pub use params::{ParamEntry, ParameterStore};
pub use tape::{OpKind, Tape, Var};
pub use tensor::{cosine, dot, normalize, Tensor};
