//! Dataset manifests, class merging and the synthetic benchmark.

mod manifest;
mod merge;
mod synth;

pub use manifest::{
    load_eval_pair, load_eval_split, load_pair, DatasetManifest, DatasetRole, ManifestEntry, Split,
    MANIFEST_FILE,
};
pub use merge::ClassMerge;
pub use synth::{
    generate_synthetic, modality_gap, synthesize, synthesize_scene, SyntheticBenchmark,
    SyntheticModality, SyntheticScene, SYNTH_CLASSES, SYNTH_CLASS_NAMES, VAL_FRACTION,
};

/// Training data from on-disk manifests: labelled source training entries
/// and unlabelled target training entries.
pub fn train_data_from_manifests(
    source: &DatasetManifest,
    target: &DatasetManifest,
) -> crate::Result<crate::train::TrainData> {
    let mut data = crate::train::TrainData::default();
    for i in source.indices(Split::Train) {
        if let (x, Some(y)) = load_pair(source, i)? {
            data.source.push((x, y));
        }
    }
    for i in target.indices(Split::Train) {
        data.target.push(load_pair(target, i)?.0);
    }
    Ok(data)
}
