//! File formats: PNG images and masks, float dumps, camera files,
//! checkpoints and the synthetic dataset layout.

pub mod cameras;
pub mod checkpoint;
pub mod dataset;
pub mod dump;
pub mod png;

pub use cameras::{read_cameras, write_cameras, CameraRecord};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dataset::{load_dataset, probe_truth, read_spec, shift_dir_name, shifted_truth, write_dataset, Dataset, ShiftSet};
pub use dump::{read_float_dump, write_float_dump, DUMP_HEADER_LEN, DUMP_MAGIC};
pub use png::{load_image, load_mask, save_image, save_mask, save_plane};
