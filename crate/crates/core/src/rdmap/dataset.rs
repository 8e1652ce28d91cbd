use std::path::{Path, PathBuf};

use super::format::read_rdm;
use super::{
    Annotation, DatasetManifest, RDMap, RdmapError, RepresentationPair, Split,
};

/// One decoded dataset sample: the RD map, both network representations,
/// and its labels.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub sample_id: String,
    pub rd: RDMap,
    pub pair: RepresentationPair,
    pub annotations: Vec<Annotation>,
}

/// A manifest bound to its directory, yielding samples lazily in manifest
/// order.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    resize: Option<(usize, usize)>,
}

impl Dataset {
    /// Open `manifest_path` and resolve RD paths relative to its parent.
    /// `resize` resamples every map to a fixed `[height, width]` grid so
    /// samples batch together.
    pub fn open(
        manifest_path: &Path,
        split: Split,
        resize: Option<(usize, usize)>,
    ) -> Result<Self, RdmapError> {
        let manifest = DatasetManifest::load(manifest_path, split)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Dataset { root, manifest, resize })
    }

    pub fn from_manifest(
        root: &Path,
        manifest: DatasetManifest,
        resize: Option<(usize, usize)>,
    ) -> Self {
        Dataset { root: root.to_path_buf(), manifest, resize }
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn split(&self) -> Split {
        self.manifest.split
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// Decode the sample at `index` in manifest order.
    pub fn load(&self, index: usize) -> Result<LoadedSample, RdmapError> {
        let record = &self.manifest.records[index];
        let path = self.root.join(&record.rd);
        let rd = read_rdm(&path).map_err(|e| match e {
            RdmapError::Io { path, .. } | RdmapError::BadMagic { path } => {
                RdmapError::MissingRdFile { sample_id: record.sample_id.clone(), path }
            }
            other => other,
        })?;
        let pair = RepresentationPair::from_rd(&rd, self.resize);
        let annotations = record.labels.iter().map(|&l| Annotation::from(l)).collect();
        Ok(LoadedSample { sample_id: record.sample_id.clone(), rd, pair, annotations })
    }

    /// Lazy iterator over all samples in manifest order. Each item decodes
    /// on demand; a missing or unreadable RD file surfaces as a per-record
    /// error naming the sample.
    pub fn iter(&self) -> impl Iterator<Item = Result<LoadedSample, RdmapError>> + '_ {
        (0..self.len()).map(move |i| self.load(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdmap::{synth_generate, to_grayscale, to_heatmap, SynthConfig};

    fn make_dataset(train: usize) -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            height: 32,
            width: 32,
            train,
            val: 0,
            test: 0,
            ..SynthConfig::default()
        };
        synth_generate(&cfg, 5, dir.path()).unwrap();
        let ds = Dataset::open(
            &dir.path().join("train").join("manifest.jsonl"),
            Split::Train,
            None,
        )
        .unwrap();
        (dir, ds)
    }

    #[test]
    fn empty_manifest_yields_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        let ds = Dataset::open(&path, Split::Val, None).unwrap();
        assert_eq!(ds.iter().count(), 0);
        assert!(ds.is_empty());
    }

    #[test]
    fn yields_samples_in_manifest_order() {
        let (_dir, ds) = make_dataset(3);
        let ids: Vec<String> =
            ds.iter().map(|s| s.unwrap().sample_id).collect();
        assert_eq!(ids, vec!["train_00000", "train_00001", "train_00002"]);
    }

    #[test]
    fn representations_match_recomputation_from_disk() {
        let (dir, ds) = make_dataset(2);
        for sample in ds.iter() {
            let sample = sample.unwrap();
            let rd = read_rdm(
                &dir.path().join("train").join("rd").join(format!("{}.rdm", sample.sample_id)),
            )
            .unwrap();
            assert_eq!(sample.pair.grayscale, to_grayscale(&rd));
            assert_eq!(sample.pair.heatmap, to_heatmap(&rd));
        }
    }

    #[test]
    fn resize_changes_pair_grid_only() {
        let (_dir, ds0) = make_dataset(1);
        let ds = Dataset { resize: Some((16, 24)), ..ds0 };
        let sample = ds.load(0).unwrap();
        assert_eq!((sample.pair.height(), sample.pair.width()), (16, 24));
        // the stored map keeps its native grid
        assert_eq!((sample.rd.range_bins(), sample.rd.doppler_bins()), (32, 32));
    }

    #[test]
    fn missing_rd_file_names_the_sample() {
        let (dir, ds) = make_dataset(2);
        std::fs::remove_file(dir.path().join("train").join("rd").join("train_00001.rdm"))
            .unwrap();
        assert!(ds.load(0).is_ok());
        match ds.load(1) {
            Err(RdmapError::MissingRdFile { sample_id, .. }) => {
                assert_eq!(sample_id, "train_00001")
            }
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }
}
