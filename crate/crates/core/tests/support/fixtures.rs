//! Small synthetic datasets and model configurations.

use gsmo_core::data::{
    load_manifest, stratified_split, Dataset, Layout, Split, SplitSpec, SyntheticSpec,
};
use gsmo_core::experiment::cmd_generate;
use gsmo_core::models::{BackboneConfig, GsmoConfig};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub data: Dataset,
    pub split: Split,
}

pub fn synthetic(spec: &SyntheticSpec, extent: usize, split_seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    cmd_generate(spec, dir.path()).unwrap();
    let manifest = load_manifest(dir.path(), Layout::Pairdir).unwrap();
    let split = stratified_split(
        &manifest,
        &SplitSpec {
            seed: split_seed,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let data = Dataset::load(manifest, None, extent).unwrap();
    Fixture { dir, data, split }
}

/// 2 species × 2 diseases, 10 images per pair, E=8.
pub fn tiny() -> Fixture {
    synthetic(&SyntheticSpec::new(2, 2, 10, 1), 8, 0)
}

pub fn model_config(extent: usize, channels: usize, hidden: usize) -> GsmoConfig {
    GsmoConfig {
        backbone: BackboneConfig {
            channels: [channels; 4],
            ..BackboneConfig::for_extent(extent)
        },
        hidden,
    }
}
