//! Synthetic data, volume files and dataset plumbing.

pub mod dataset;
pub mod init;
pub mod phantom;
pub mod preprocess;
pub mod rv3d;

pub use dataset::{
    generate_cases, generate_dataset, phantom_suite, split_dataset, Dataset, DatasetConfig, DatasetManifest,
    ManifestEntry, Split, SplitName, MANIFEST_FILE,
};
pub use init::{initial_segmentation, InitMethod};
pub use phantom::{generate_phantom, PhantomConfig, PhantomShape};
pub use rv3d::VolumeKind;
