//! Training loop, evaluation, output repair and the transfer experiment.

mod config;
mod evaluate;
mod experiment;
mod gradcheck;
mod postprocess;
mod train;

pub use config::{lr_schedule, TrainConfig};
pub use evaluate::{decode_tokens, evaluate, EvalReport, ExampleError, THREADS_ENV};
pub use experiment::{mean_sd, run_transfer_experiment, Cell, RunRecord, TransferConfig, TransferReport};
pub use gradcheck::{full_loss_gradcheck, gradcheck_corpora, gradcheck_setup, GradCheckSetup};
pub use postprocess::{balance_brackets, is_balanced, postprocess};
pub use train::{
    build_model, task_spec_from, train, train_with, BadStep, EpochSummary, StepRecord, TaskData, TrainOutcome,
    MAX_CONSECUTIVE_BAD_STEPS,
};
