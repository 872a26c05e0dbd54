//! Synthetic re-identification data, its file format and batching.

mod batch;
mod format;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

pub use batch::{augment_sample, make_batches, normalize_pixels, AugmentFlags, AugmentRecord, Batch, Batches};
pub use format::{
    decode_dataset, encode_dataset, import_manifest, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION,
    HEADER_BYTES, RECORD_BYTES,
};
pub use synth::{render_view, synth_generate, Identity};

use crate::error::{Error, Result};

pub const IMAGE_C: usize = 3;
pub const IMAGE_H: usize = 64;
pub const IMAGE_W: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3 x 64 x 32` bytes, channel-first.
    pub pixels: Vec<u8>,
    pub identity: u32,
    pub camera: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_cams: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn identities(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.identity).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Query,
    Gallery,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Query => "query",
            Role::Gallery => "gallery",
        }
    }
}

/// Train/test partition by identity plus the query/gallery protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
    /// `(sample index, class label)` for training.
    pub train: Vec<(usize, usize)>,
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

impl SplitSpec {
    /// The `n_train_ids` smallest identities train; the rest test. Each test
    /// identity's first sample is its query, the rest go to the gallery.
    pub fn new(ds: &Dataset, n_train_ids: usize) -> Result<Self> {
        let ids: Vec<u32> = ds.identities().into_iter().collect();
        if n_train_ids == 0 || n_train_ids >= ids.len() {
            return Err(Error::config(format!(
                "train identity count {n_train_ids} must be in [1, {})",
                ids.len()
            )));
        }
        let train_ids = ids[..n_train_ids].to_vec();
        let test_ids = ids[n_train_ids..].to_vec();
        let label: BTreeMap<u32, usize> = train_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut train = Vec::new();
        let mut query = Vec::new();
        let mut gallery = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, s) in ds.samples.iter().enumerate() {
            if let Some(l) = label.get(&s.identity) {
                train.push((i, *l));
            } else if seen.insert(s.identity) {
                query.push(i);
            } else {
                gallery.push(i);
            }
        }
        for &q in &query {
            let qs = &ds.samples[q];
            let answerable = gallery.iter().any(|&g| {
                let gs = &ds.samples[g];
                gs.identity == qs.identity && gs.camera != qs.camera
            });
            if !answerable {
                return Err(Error::config(format!(
                    "query for identity {} has no cross-camera gallery match",
                    qs.identity
                )));
            }
        }
        Ok(Self {
            train_ids,
            test_ids,
            train,
            query,
            gallery,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.train_ids.len()
    }

    pub fn role_of(&self, index: usize) -> Option<Role> {
        if self.train.iter().any(|(i, _)| *i == index) {
            Some(Role::Train)
        } else if self.query.contains(&index) {
            Some(Role::Query)
        } else if self.gallery.contains(&index) {
            Some(Role::Gallery)
        } else {
            None
        }
    }

    /// Manifest CSV: `index,identity,camera,role`.
    pub fn manifest_csv(&self, ds: &Dataset) -> String {
        let mut roles = vec![""; ds.samples.len()];
        for (i, _) in &self.train {
            roles[*i] = Role::Train.as_str();
        }
        for i in &self.query {
            roles[*i] = Role::Query.as_str();
        }
        for i in &self.gallery {
            roles[*i] = Role::Gallery.as_str();
        }
        let mut out = String::from("index,identity,camera,role\n");
        for (i, s) in ds.samples.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{}\n", s.identity, s.camera, roles[i]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_hygiene_and_answerability() {
        let ds = synth_generate(2, 6, 4, 3).unwrap();
        let split = SplitSpec::new(&ds, 4).unwrap();
        let train: BTreeSet<_> = split.train_ids.iter().collect();
        assert!(split.test_ids.iter().all(|id| !train.contains(id)));
        assert_eq!(split.train.len(), 16);
        assert_eq!(split.query.len(), 2);
        assert_eq!(split.gallery.len(), 6);
        assert_eq!(split.num_classes(), 4);
        assert_eq!(split.role_of(split.query[0]), Some(Role::Query));
        let csv = split.manifest_csv(&ds);
        assert_eq!(csv.lines().count(), 25);
        assert!(csv.lines().nth(17).unwrap().ends_with(",query"));
    }

    #[test]
    fn bad_train_counts() {
        let ds = synth_generate(2, 3, 2, 2).unwrap();
        assert!(SplitSpec::new(&ds, 0).is_err());
        assert!(SplitSpec::new(&ds, 3).is_err());
    }
}
