//! Persistence: tensor container, model files, quantization and reports.

pub mod model_io;
pub mod quant;
pub mod report;
pub mod tensor_file;

pub use model_io::{load_calib, load_compressed, load_model, save_calib, save_compressed, save_model};
pub use quant::{dequantize, quantize_symmetric, QuantTensor};
pub use report::{read_report, write_report, Report, REPORT_SCHEMA};
pub use tensor_file::{read_tensors, write_tensors, DType, Tensor, TensorData};
