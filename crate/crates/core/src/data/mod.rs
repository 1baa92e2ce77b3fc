//! Clip ingestion, preprocessing and the synthetic gait generator.

pub mod features;
pub mod frame;
mod loader;
mod record;
pub mod sequence;
pub mod synth;

pub use features::{decode_features, encode_features, read_features, write_features, ByteOrder};
pub use frame::{resize_bilinear, GrayFrame};
pub use loader::{
    format_manifest, load_manifest, load_sequence, load_silhouette_dir, parse_condition_seq, parse_manifest,
    LoadOptions, LoadReport, ManifestEntry, MANIFEST_HEADER,
};
pub use record::{ClipData, ClipRecord, Condition, DatasetSplit, STANDARD_TRAIN_MAX_ID};
pub use sequence::{length_indices, normalize_length, CLIP_LEN};
pub use synth::{clip_slot, synth_gait_dataset, SynthConfig};
