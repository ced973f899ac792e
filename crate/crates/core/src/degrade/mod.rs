//! Synthetic degradations and paired datasets.
//!
//! Images are planar `[C,H,W]` f32 tensors in [0,1]. Every degradation is a
//! pure function of (clean image, parameters, seed).

mod dataset;
pub mod filters;
mod io;
mod spec;
mod synth;

pub use dataset::{build_paired_dataset, DatasetSpec, KindConfig, PairedDataset, Split, SplitCounts};
pub use io::{
    image_file_name, manifest_text, parse_manifest, read_dataset, read_manifest, read_png, verify_dataset,
    write_dataset, write_png, Manifest, MANIFEST_FILE,
};
pub use spec::{
    Degradation, DegradationKind, DegradationSpec, DepthMode, RAIN_ANGLES, RAIN_DISTANCES, SNOW_BLUR_DISTANCE,
    SNOW_CELL_SIZES,
};
pub use synth::{
    apply_haze, apply_noise, apply_rain, apply_snow, degrade_image, depth_map, derangement, gen_clean,
    make_adversarial, noise_field, rain_layer, snow_stages, ImagePair, SnowStages, DEFAULT_RAIN_STRENGTH,
    DEFAULT_SNOW_STRENGTH, LEVEL_BLACK, LEVEL_WHITE, RAIN_SPECKLE_BLUR,
};

