//! Minimal reverse-mode autodiff engine, Adam, and checkpoint I/O.

mod adam;
mod checkpoint;
mod gemm;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    file_sha256, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ParamSet,
    MAGIC, VERSION,
};
pub use graph::{frames_to_tensor, huber_value, tensor_frame, Graph, Padding, Var};
pub use tensor::Tensor;
