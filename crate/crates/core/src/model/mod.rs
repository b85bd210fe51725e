//! Small trainable encoder–decoder model with exact reverse-mode gradients.

mod autograd;
mod checkpoint;
mod infer;
mod optim;
mod tensor;
mod transformer;

pub use autograd::{Adjoints, Graph, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use infer::{DecoderState, EncoderState};
pub use optim::{apply_update, AdamState};
pub use tensor::{log_softmax, log_sum_exp, softmax_in_place, Mat};
pub use transformer::{
    expected_embedding, expected_embedding_tape, Gradients, ModelConfig, ModelParams, ParamVars,
    Tape, TensorSpec, DECODER_START,
};
