//! Dense tensors, a reverse-mode tape, clipped SGD, gradient checking and
//! parameter checkpoints.

mod checkpoint;
mod double_double;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, restore_into, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use double_double::DoubleDouble;
pub use gradcheck::{grad_check, relative_error, GradCheck, GradCheckReport};
pub use optim::{sgd_step, SgdReport, DEFAULT_CLIP_NORM};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{Binary, NllRow, Tape, Unary, Var, PROB_FLOOR};
pub use tensor::{masked_softmax, matmul, Tensor};
