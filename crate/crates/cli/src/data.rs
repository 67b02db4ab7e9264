use std::fmt;

use nalgebra::DMatrix;

use fsdh::dataset::{load_csv, load_mnist, normalize, synth_blobs};
use fsdh::RawDataset;

use crate::config::{RunConfig, Source};

/// An error tagged with the pipeline stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.message)
    }
}

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            message: e.to_string(),
        })
    }
}

pub fn fail<T>(stage: &'static str, message: impl Into<String>) -> Result<T, StageError> {
    Err(StageError {
        stage,
        message: message.into(),
    })
}

/// Training and query sets as described by the config.
pub fn load(cfg: &RunConfig, need_test: bool) -> Result<(RawDataset, Option<RawDataset>), StageError> {
    let (train, test) = match cfg.source {
        Source::Synth => {
            let (train, test) = synth_split(cfg)?;
            (train, Some(test))
        }
        Source::Mnist | Source::Csv => {
            let read = |images: &Option<std::path::PathBuf>, labels: &Option<std::path::PathBuf>, limit| {
                let (Some(images), Some(labels)) = (images, labels) else {
                    return fail("dataset", "image and label paths are both required");
                };
                for p in [images, labels] {
                    if !p.exists() {
                        return fail("dataset", format!("{}: no such file", p.display()));
                    }
                }
                let ds = if cfg.source == Source::Mnist {
                    load_mnist(images, labels, limit)
                } else {
                    load_csv(images, labels, cfg.classes).map(|ds| match limit {
                        Some(n) if n < ds.len() => ds.head(n),
                        _ => ds,
                    })
                };
                ds.stage("dataset")
            };
            let train = read(&cfg.train_images, &cfg.train_labels, cfg.train_limit)?;
            let test = if need_test || cfg.test_images.is_some() {
                Some(read(&cfg.test_images, &cfg.test_labels, cfg.test_limit)?)
            } else {
                None
            };
            (train, test)
        }
    };
    let norm = |ds: RawDataset| match cfg.normalize.0 {
        Some(mode) => normalize(&ds, mode).stage("dataset"),
        None => Ok(ds),
    };
    let train = norm(train)?;
    let test = test.map(norm).transpose()?;
    if let Some(t) = &test {
        if t.dim() != train.dim() {
            return fail(
                "dataset",
                format!("query dimension {} differs from training dimension {}", t.dim(), train.dim()),
            );
        }
    }
    Ok((train, test))
}

/// One draw of blobs split into training and query samples that share centers.
pub fn synth_split(cfg: &RunConfig) -> Result<(RawDataset, RawDataset), StageError> {
    let per = cfg.synth_per_class + cfg.synth_test_per_class;
    let full = synth_blobs(cfg.synth_classes, per, cfg.synth_dim, cfg.synth_spread, cfg.synth_seed).stage("dataset")?;
    // Samples are class-major; interleave classes so a prefix stays balanced.
    let (mut train_idx, mut test_idx): (Vec<usize>, Vec<usize>) =
        (0..full.len()).partition(|i| i % per < cfg.synth_per_class);
    for idx in [&mut train_idx, &mut test_idx] {
        idx.sort_by_key(|&i| (i % per, i / per));
    }
    let pick = |idx: &[usize]| {
        let f = DMatrix::from_fn(full.dim(), idx.len(), |r, c| full.features[(r, idx[c])]);
        RawDataset::new(f, full.labels.subset(idx), full.class_count).stage("dataset")
    };
    let mut train = pick(&train_idx)?;
    let mut test = pick(&test_idx)?;
    if let Some(n) = cfg.train_limit.filter(|&n| n < train.len()) {
        train = train.head(n);
    }
    if let Some(n) = cfg.test_limit.filter(|&n| n < test.len()) {
        test = test.head(n);
    }
    Ok((train, test))
}
