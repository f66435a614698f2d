//! Conditional attention policy, trained by behavior cloning with
//! hand-derived reverse-mode gradients.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use model::{
    argmax, candidate_matrix, encode_instruction, EncodedInstruction, init_params, policy_step, predict_action, Injection,
    InstructionFeatures, ModelConfig, Policy, PolicyParameters, StepOutput, StepTrace,
};
pub use loss::{compute_gradients, trajectory_loss, BatchGradients, TrainExample};
pub use checkpoint::{AdamState, Checkpoint};
pub use tensor::Matrix;
pub use train::{train, train_from, LogEntry, TrainOutcome, TrainSchedule, ValidationPoint};
