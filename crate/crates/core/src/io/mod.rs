//! Embedding datasets, label vectors, and their on-disk formats.

mod csv_import;
mod format;
mod labels;
mod matrix;

pub use csv_import::{read_csv_embeddings, read_csv_from};
pub use format::{
    decode_checkpoint, decode_embeddings, encode_checkpoint, encode_embeddings, load_checkpoint,
    load_embeddings, manifest_path, save_checkpoint, save_embeddings, DatasetManifest, Split,
    CKPT_MAGIC, EMB_MAGIC, FORMAT_VERSION,
};
pub use labels::{LabelFile, LabelKind, LabelVector};
pub use matrix::{dot, l2_normalize, EmbeddingMatrix};
