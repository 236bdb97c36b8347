//! File formats and boundary surfaces.

mod container;
mod featurize;
mod manifest;
mod synth;

pub use container::{TensorContainer, DTYPE_F64, MAGIC, VERSION};
pub use featurize::{dataset_from_container, dataset_to_container, featurize_manifest};
pub use manifest::{
    parse_manifest, parse_manifest_str, write_manifest, Label, ManifestEntry, MANIFEST_COLUMNS,
};
pub use synth::{synth_dataset, SyntheticSpec};
