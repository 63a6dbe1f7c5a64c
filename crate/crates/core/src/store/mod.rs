//! On-disk formats: binary tensors, image datasets, numeric CSV tables,
//! and run manifests.

pub mod csv;
pub mod dataset;
pub mod manifest;
pub mod tensor;

pub use csv::CsvTable;
pub use dataset::{u8_to_unit, ImageDataset, ImageShape, SourceFile};
pub use manifest::{RunManifest, MANIFEST_FILE};
pub use tensor::{
    read_tensor, read_tensor_file, write_tensor, write_tensor_file, Dtype, Tensor,
    TensorValues, TENSOR_MAGIC, TENSOR_VERSION,
};
