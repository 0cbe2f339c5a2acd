//! Scene data: rasters, preprocessing, patches, splits, synthetic scenes,
//! and the on-disk dataset format.

mod io;
mod patches;
mod preprocess;
mod raster;
mod synthetic;

pub use io::{read_dataset, write_dataset, Dataset, DatasetHeader};
pub use patches::{
    extract_patches, patches_for_pixels, stratified_split, stratified_split_indices,
    PatchSelection, PatchSet, SplitSpec, TrainSize,
};
pub use preprocess::{
    derive_lidar_channels, mi_band_select, pca_reduce, top_bands, ChannelStats, PcaModel,
    PreprocessConfig, PreprocessModel, DERIVED_LIDAR_CHANNELS,
};
pub use raster::{CubeKind, LabelMap, RasterCube};
pub use synthetic::{class_height, class_signature, make_synthetic, SyntheticSpec};
