//! Desk-scale causal transformer with pluggable positional encoding.
//!
//! The model is a pre-LN decoder (LayerNorm with gain only, GELU FFN, no
//! linear biases) with hand-written backpropagation. Dense weights are
//! generic over `f32`/`f64`; FIRE parameters always stay in `f64`.

mod backward;
mod checkpoint;
mod eval;
mod forward;
mod model;
mod task;
mod tensor;
mod train;

pub use backward::{backward_into, backward_lm};
pub use checkpoint::{
    checkpoint_bytes, decode_tensors, encode_tensors, load_checkpoint, params_from_bytes, save_checkpoint,
    RawTensor, MODEL_FILE, MODEL_SCHEMA, MODEL_SCHEMA_VERSION, TENSOR_FILE, TENSOR_FORMAT_VERSION, TENSOR_MAGIC,
};
pub use eval::{eval_lengths, EvalReport, EvalRow, EVAL_CSV_HEADER};
pub use forward::{forward_lm, forward_tokens, masked_loss, softmax_causal, ForwardCache, ForwardOutput, LossStats};
pub use model::{LayerParams, ModelConfig, ModelGrads, ModelParams, PeConfig, PeState};
pub use task::{generate_copy_task, CopyTask, TaskKind, TaskSample, TaskStream, FIRST_SYMBOL, PAD, SEP};
pub use tensor::{gemm, matmul_into, Mat, Scalar, View};
pub use train::{train, Adam, LossPoint, TrainConfig, TrainReport};
