//! Domain-randomized synthetic images: cutout extraction, compositing,
//! procedural toy seeds, and dataset manifests.

mod compose;
mod dataset;
mod manifest;
mod segment;
mod toy;

pub use compose::{compose_image, Background, ComposeOptions, Placement, PLACEMENT_RETRIES};
pub use dataset::{generate_dataset, load_cutout_dir, DatasetSpec, GeneratedDataset};
pub use manifest::{DatasetManifest, Record, Split, MANIFEST_FILE};
pub use segment::{extract_cutout, extract_cutouts, otsu_threshold, ThresholdConfig, MAX_COVERAGE};
pub use toy::{generate_toy_cutouts, ToyConfig};

use crate::raster::Image;

/// A segmented object: RGB pixels plus an alpha mask with at least one
/// non-zero entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutout {
    pub image: Image,
    pub class_label: String,
    pub source_id: String,
}

impl Cutout {
    pub fn opaque_pixels(&self) -> usize {
        self.image.alpha().map_or(0, |a| a.iter().filter(|&&v| v > 0).count())
    }
}
