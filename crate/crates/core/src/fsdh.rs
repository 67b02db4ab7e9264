//! Closed-form trainer and the trained model artifact.
//!
//! Each class gets one column of a Sylvester Hadamard matrix as its code and
//! the projection is fitted to those targets with one ridge solve. The right
//! hand side `X B^T` only depends on per-class feature sums, so the cost after
//! the kernel map is one `M x M` factorization regardless of the code length.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::codes::{expand_codes, pick_class_codes, sylvester, ClassCodes, SignMatrix};
use crate::dataset::{LabelArray, RawDataset};
use crate::error::{Error, Result};
use crate::index::{words_per_code, PackedCodes};
use crate::kernelmap::{fit_anchors, KernelMap};
use crate::linalg;
use crate::sdh::{train_sdh, ObjectiveBreakdown, ProjectionSolver, SdhConfig, SdhState};

pub const MODEL_MAGIC: &[u8; 4] = b"FSDH";
pub const MODEL_VERSION: u32 = 1;

/// Samples encoded per kernel-transform batch.
const ENCODE_BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Fsdh,
    Sdh,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fsdh" => Ok(Method::Fsdh),
            "sdh" => Ok(Method::Sdh),
            other => Err(Error::invalid(format!("unknown method {other:?}, expected fsdh or sdh"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fsdh => "fsdh",
            Method::Sdh => "sdh",
        })
    }
}

/// What a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fingerprint {
    pub samples: u64,
    pub dim: u64,
    pub classes: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub kernel: KernelMap,
    /// `M x L`.
    pub projection: DMatrix<f64>,
    /// Present for FSDH models only.
    pub class_codes: Option<ClassCodes>,
    pub lambda: f64,
    pub method: Method,
    pub fingerprint: Fingerprint,
}

/// Fits `P` for the Hadamard class codes of `bits` bits.
///
/// `features` is `M x N` (already kernel-mapped). `jitter = None` uses the
/// F-step default.
pub fn train_fsdh(
    features: &DMatrix<f64>,
    labels: &LabelArray,
    classes: usize,
    bits: usize,
    jitter: Option<f64>,
) -> Result<(DMatrix<f64>, ClassCodes)> {
    if labels.len() != features.ncols() {
        return Err(Error::DimensionMismatch {
            what: "label count vs sample count",
            expected: features.ncols(),
            actual: labels.len(),
        });
    }
    labels.validate(classes)?;
    if bits < 2 || !bits.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(bits));
    }
    if classes > bits {
        return Err(Error::TooManyClasses { classes, bits });
    }
    let class_codes = pick_class_codes(&sylvester(bits)?, classes)?;

    // X B^T = S B'^T with S the per-class sums of feature columns.
    let mut sums = DMatrix::<f64>::zeros(features.nrows(), classes);
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let mut col = sums.column_mut(y);
        col += features.column(i);
    }
    let rhs = linalg::mul_transpose(&sums, &class_codes.to_f64());
    let projection = ProjectionSolver::new(features, jitter)?.solve(&rhs);
    Ok((projection, class_codes))
}

/// Ridge classifier for one sample per class: `B' / (L + lambda)`.
pub fn optimal_weights(class_codes: &ClassCodes, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    Ok(class_codes.to_f64() / (class_codes.bits() as f64 + lambda))
}

/// Anchor settings for the kernel map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub anchors: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl KernelConfig {
    pub fn fit(&self, train: &RawDataset) -> Result<KernelMap> {
        fit_anchors(train, self.anchors, self.sigma, self.seed)
    }
}

fn fingerprint(train: &RawDataset, seed: u64) -> Fingerprint {
    Fingerprint {
        samples: train.len() as u64,
        dim: train.dim() as u64,
        classes: train.class_count as u64,
        seed,
    }
}

/// Anchors, kernel map and FSDH fit on a raw training set.
pub fn fit_fsdh(
    train: &RawDataset,
    kernel: &KernelConfig,
    bits: usize,
    lambda: f64,
    jitter: Option<f64>,
) -> Result<HashModel> {
    let map = kernel.fit(train)?;
    let x = map.transform(&train.features)?;
    let (projection, class_codes) = train_fsdh(&x, &train.labels, train.class_count, bits, jitter)?;
    Ok(HashModel {
        kernel: map,
        projection,
        class_codes: Some(class_codes),
        lambda,
        method: Method::Fsdh,
        fingerprint: fingerprint(train, kernel.seed),
    })
}

/// Anchors, kernel map and SDH training on a raw training set.
pub fn fit_sdh(
    train: &RawDataset,
    kernel: &KernelConfig,
    config: &SdhConfig,
) -> Result<(HashModel, SdhState, Vec<ObjectiveBreakdown>)> {
    let map = kernel.fit(train)?;
    let x = map.transform(&train.features)?;
    let (state, trajectory) = train_sdh(&x, &train.labels, train.class_count, config)?;
    let model = HashModel {
        kernel: map,
        projection: state.projection.clone(),
        class_codes: None,
        lambda: config.lambda,
        method: Method::Sdh,
        fingerprint: fingerprint(train, kernel.seed),
    };
    Ok((model, state, trajectory))
}

impl HashModel {
    pub fn bits(&self) -> usize {
        self.projection.ncols()
    }

    pub fn classes(&self) -> usize {
        self.fingerprint.classes as usize
    }

    /// Real-valued scores `P^T Phi(x)`, `L x K`.
    pub fn scores(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let phi = self.kernel.transform(raw)?;
        Ok(linalg::tr_mul(&self.projection, &phi))
    }

    /// `sgn(P^T Phi(x))` per column of `raw` (`D x K`), with `sgn(0) = +1`.
    pub fn encode(&self, raw: &DMatrix<f64>) -> Result<PackedCodes> {
        if raw.nrows() != self.kernel.source_dim() {
            return Err(Error::DimensionMismatch {
                what: "sample dimension vs kernel source dimension",
                expected: self.kernel.source_dim(),
                actual: raw.nrows(),
            });
        }
        self.encode_batched(raw.ncols(), |start, n| self.scores(&raw.columns(start, n).into_owned()))
    }

    /// Same as [`encode`](Self::encode) for features already mapped by `self.kernel` (`M x K`).
    pub fn encode_transformed(&self, features: &DMatrix<f64>) -> Result<PackedCodes> {
        if features.nrows() != self.projection.nrows() {
            return Err(Error::DimensionMismatch {
                what: "feature rows vs anchor count",
                expected: self.projection.nrows(),
                actual: features.nrows(),
            });
        }
        self.encode_batched(features.ncols(), |start, n| {
            Ok(linalg::tr_mul(&self.projection, &features.columns(start, n).into_owned()))
        })
    }

    fn encode_batched(
        &self,
        k: usize,
        mut scores: impl FnMut(usize, usize) -> Result<DMatrix<f64>>,
    ) -> Result<PackedCodes> {
        let bits = self.bits();
        let wpc = words_per_code(bits);
        let mut words = vec![0u64; wpc * k];
        let mut start = 0;
        while start < k {
            let n = ENCODE_BATCH.min(k - start);
            let batch = scores(start, n)?;
            for (c, col) in batch.column_iter().enumerate() {
                let dst = &mut words[(start + c) * wpc..(start + c + 1) * wpc];
                for (j, &v) in col.iter().enumerate() {
                    if v >= 0.0 {
                        dst[j / 64] |= 1 << (j % 64);
                    }
                }
            }
            start += n;
        }
        PackedCodes::from_words(words, bits, k)
    }

    /// Training targets `B` this model was fitted to (FSDH only).
    pub fn target_codes(&self, labels: &LabelArray) -> Result<SignMatrix> {
        match &self.class_codes {
            Some(cc) => expand_codes(cc, labels),
            None => Err(Error::invalid("SDH models carry no class codes")),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.projection.nrows() != self.kernel.anchor_count() {
            return Err(Error::DimensionMismatch {
                what: "projection rows vs anchor count",
                expected: self.kernel.anchor_count(),
                actual: self.projection.nrows(),
            });
        }
        if let Some(cc) = &self.class_codes {
            if cc.bits() != self.bits() {
                return Err(Error::DimensionMismatch {
                    what: "class code length vs projection columns",
                    expected: self.bits(),
                    actual: cc.bits(),
                });
            }
        }
        Ok(())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{what} {v} does not fit in 32 bits")))
}

/// Serializes a model; see [`save_model`] for the layout.
pub fn model_to_bytes(model: &HashModel) -> Result<Vec<u8>> {
    model.validate()?;
    let l = model.bits();
    let c = model.classes();
    let m = model.kernel.anchor_count();
    let d = model.kernel.source_dim();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for (v, what) in [(l, "code length"), (c, "class count"), (m, "anchor count"), (d, "dimension")] {
        buf.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    buf.extend_from_slice(&model.lambda.to_le_bytes());
    buf.extend_from_slice(&model.kernel.sigma().to_le_bytes());
    buf.extend_from_slice(&model.fingerprint.samples.to_le_bytes());
    buf.extend_from_slice(&model.fingerprint.seed.to_le_bytes());
    let method: u32 = match model.method {
        Method::Fsdh => 0,
        Method::Sdh => 1,
    };
    buf.extend_from_slice(&method.to_le_bytes());
    for v in model.kernel.anchors().iter().chain(model.projection.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    match (&model.class_codes, model.method) {
        (Some(cc), Method::Fsdh) => {
            if cc.classes() != c {
                return Err(Error::DimensionMismatch {
                    what: "class codes vs fingerprint class count",
                    expected: c,
                    actual: cc.classes(),
                });
            }
            let packed = PackedCodes::pack(cc.matrix())?;
            for w in packed.words() {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
        (None, Method::Sdh) => {}
        _ => {
            return Err(Error::ModelFormat(
                "class codes must be present exactly for fsdh models".into(),
            ))
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Writes a model file.
///
/// Layout, little-endian: magic `FSDH`, `u32` version, `u32` L, C, M, D,
/// `f64` lambda, sigma, `u64` training sample count, `u64` seed, `u32` method
/// (0 fsdh, 1 sdh), anchors (`D x M` f64, column-major), projection (`M x L`
/// f64, column-major), class codes for fsdh models (`C` packed codes of
/// `ceil(L/64)` u64 words each), then the CRC32 of everything before it.
pub fn save_model(model: &HashModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HashModel> {
    model_from_bytes(&std::fs::read(path)?)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.data.len() {
            return Err(Error::ModelFormat(format!(
                "truncated file: needed {end} bytes, have {}",
                self.data.len()
            )));
        }
        let out = self.data[self.pos..end].try_into().unwrap();
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn model_from_bytes(data: &[u8]) -> Result<HashModel> {
    let mut r = Reader { data, pos: 0 };
    let magic: [u8; 4] = r.take()?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(MODEL_MAGIC),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version} (this build reads version {MODEL_VERSION})"
        )));
    }
    let l = r.u32()? as usize;
    let c = r.u32()? as usize;
    let m = r.u32()? as usize;
    let d = r.u32()? as usize;
    let lambda = r.f64()?;
    let sigma = r.f64()?;
    let samples = r.u64()?;
    let seed = r.u64()?;
    let method = match r.u32()? {
        0 => Method::Fsdh,
        1 => Method::Sdh,
        other => return Err(Error::ModelFormat(format!("unknown method tag {other}"))),
    };

    let code_words = if method == Method::Fsdh { c * words_per_code(l) } else { 0 };
    let payload = (d as u128 * m as u128 + m as u128 * l as u128 + code_words as u128) * 8;
    let expected = r.pos as u128 + payload + 4;
    if (data.len() as u128) < expected {
        return Err(Error::ModelFormat(format!(
            "truncated file: header implies {expected} bytes, have {}",
            data.len()
        )));
    }
    if data.len() as u128 > expected {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after the checksum",
            data.len() as u128 - expected
        )));
    }
    let body_len = data.len() - 4;
    let stored = u32::from_le_bytes(data[body_len..].try_into().unwrap());
    let actual = crc32fast::hash(&data[..body_len]);
    if stored != actual {
        return Err(Error::ModelFormat(format!(
            "checksum failure: stored {stored:08x}, computed {actual:08x}"
        )));
    }

    let mut floats = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f64()).collect() };
    let anchors = DMatrix::from_vec(d, m, floats(d * m)?);
    let projection = DMatrix::from_vec(m, l, floats(m * l)?);
    let class_codes = if method == Method::Fsdh {
        let words = (0..code_words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let packed = PackedCodes::from_words(words, l, c)
            .map_err(|e| Error::ModelFormat(format!("class codes: {e}")))?;
        Some(ClassCodes::new(packed.unpack())?)
    } else {
        None
    };
    let model = HashModel {
        kernel: KernelMap::new(anchors, sigma)?,
        projection,
        class_codes,
        lambda,
        method,
        fingerprint: Fingerprint {
            samples,
            dim: d as u64,
            classes: c as u64,
            seed,
        },
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;
    use crate::index::CodeIndex;
    use crate::sdh::f_step;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_features_reproduce_class_codes() {
        let x = DMatrix::identity(2, 2);
        let labels: LabelArray = vec![0, 1].into();
        let (p, cc) = train_fsdh(&x, &labels, 2, 2, Some(0.0)).unwrap();
        assert_eq!(p, cc.to_f64().transpose());
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn anchor_coincident_inputs_encode_to_class_codes() {
        // Far-apart anchors make the kernel map the identity up to exp(-200).
        let raw = DMatrix::from_row_slice(2, 4, &[10.0, 0.0, -10.0, 0.0, 0.0, 10.0, 0.0, -10.0]);
        let ds = RawDataset::new(raw.clone(), vec![0, 1, 2, 3].into(), 4).unwrap();
        let model = fit_fsdh(&ds, &KernelConfig { anchors: 4, sigma: 1.0, seed: 0 }, 8, 1.0, Some(0.0)).unwrap();
        let codes = model.encode(&raw).unwrap();
        assert_eq!(codes.unpack(), model.target_codes(&ds.labels).unwrap());
    }

    #[test]
    fn assumption_errors() {
        let x = DMatrix::identity(3, 3);
        let labels: LabelArray = vec![0, 1, 2].into();
        assert!(matches!(train_fsdh(&x, &labels, 3, 24, None), Err(Error::NotPowerOfTwo(24))));
        let err = train_fsdh(&x, &labels, 3, 24, None).unwrap_err().to_string();
        assert!(err.contains("A1") && err.contains("power of 2"));
        assert!(matches!(
            train_fsdh(&x, &labels, 3, 2, None),
            Err(Error::TooManyClasses { classes: 3, bits: 2 })
        ));
    }

    #[test]
    fn class_sum_shortcut_matches_f_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(6, 40, |_, _| rng.random_range(-1.0..1.0));
        let labels: LabelArray = (0..40).map(|i| i % 5).collect::<Vec<_>>().into();
        let (p, cc) = train_fsdh(&x, &labels, 5, 16, Some(1e-6)).unwrap();
        let b = expand_codes(&cc, &labels).unwrap();
        let reference = f_step(&x, &b, 1e-6).unwrap();
        assert!((p - reference).abs().max() < 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth_blobs(4, 20, 5, 0.3, 2).unwrap();
        let k = KernelConfig { anchors: 16, sigma: 0.5, seed: 3 };
        let a = fit_fsdh(&ds, &k, 16, 1.0, None).unwrap();
        let b = fit_fsdh(&ds, &k, 16, 1.0, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_self_retrieval_precision() {
        let ds = crate::dataset::normalize(&synth_blobs(10, 100, 16, 0.3, 1).unwrap(), Default::default()).unwrap();
        let model = fit_fsdh(&ds, &KernelConfig { anchors: 64, sigma: 0.4, seed: 0 }, 32, 1.0, None).unwrap();
        let codes = model.encode(&ds.features).unwrap();
        let index = CodeIndex::new(codes.clone(), ds.labels.clone()).unwrap();
        let mut total = 0.0;
        for q in 0..ds.len() {
            let hits = index.radius_search(codes.code(q), 2).unwrap();
            let good = hits.iter().filter(|h| ds.labels.get(h.0) == ds.labels.get(q)).count();
            total += good as f64 / hits.len() as f64;
        }
        let precision = total / ds.len() as f64;
        assert!(precision > 0.95, "precision {precision}");
    }

    #[test]
    fn encode_matches_unpacked_sign_oracle() {
        let ds = synth_blobs(3, 30, 4, 0.5, 4).unwrap();
        let model = fit_fsdh(&ds, &KernelConfig { anchors: 20, sigma: 1.0, seed: 5 }, 64, 1.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = DMatrix::from_fn(4, 100, |_, _| rng.random_range(-2.0..2.0));
        let packed = model.encode(&raw).unwrap().unpack();
        for k in 0..100 {
            for j in 0..64 {
                let mut s = 0.0;
                for m in 0..20 {
                    let d2: f64 = (0..4).map(|d| (raw[(d, k)] - model.kernel.anchors()[(d, m)]).powi(2)).sum();
                    s += model.projection[(m, j)] * (-d2 / model.kernel.sigma()).exp();
                }
                if s.abs() > 1e-9 {
                    assert_eq!(packed[(j, k)], if s > 0.0 { 1 } else { -1 });
                }
            }
        }
        assert_eq!(model.encode(&raw.columns(3, 1).into_owned()).unwrap().code(0), model.encode(&raw).unwrap().code(3));
        assert!(model.encode(&DMatrix::zeros(3, 1)).is_err());
        let phi = model.kernel.transform(&raw).unwrap();
        assert_eq!(model.encode_transformed(&phi).unwrap(), model.encode(&raw).unwrap());
    }

    #[test]
    fn optimal_weights_cases() {
        let cc = pick_class_codes(&sylvester(16).unwrap(), 10).unwrap();
        let w = optimal_weights(&cc, 1.0).unwrap();
        assert!(w.iter().all(|v| (v.abs() - 1.0 / 17.0).abs() < 1e-16));
        let w0 = optimal_weights(&cc, 0.0).unwrap();
        assert_eq!(w0.transpose() * cc.to_f64(), DMatrix::identity(10, 10));
        for (l, c, lambda) in [(4, 3, 0.5), (8, 5, 2.0), (32, 10, 1.0), (2, 1, 7.5)] {
            let cc = pick_class_codes(&sylvester(l).unwrap(), c).unwrap();
            let w = optimal_weights(&cc, lambda).unwrap();
            let b = cc.to_f64();
            let resid = (&b * b.transpose() + DMatrix::identity(l, l) * lambda) * w - &b;
            assert!(resid.norm() < 1e-12);
        }
    }

    fn toy_model() -> HashModel {
        let ds = synth_blobs(3, 10, 5, 0.2, 7).unwrap();
        fit_fsdh(&ds, &KernelConfig { anchors: 6, sigma: 0.7, seed: 8 }, 64, 1.0, None).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fsdh");
        let model = toy_model();
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);

        let ds = synth_blobs(3, 10, 5, 0.2, 7).unwrap();
        let cfg = SdhConfig { bits: 24, max_iters: 2, ..SdhConfig::default() };
        let (sdh, _, _) = fit_sdh(&ds, &KernelConfig { anchors: 6, sigma: 0.7, seed: 8 }, &cfg).unwrap();
        save_model(&sdh, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), sdh);
    }

    #[test]
    fn load_errors() {
        let good = model_to_bytes(&toy_model()).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        let e = model_from_bytes(&bad).unwrap_err().to_string();
        assert!(e.contains("bad magic") && e.contains("FSDH"), "{e}");

        let mut bad = good.clone();
        bad[4] = 2;
        let e = model_from_bytes(&bad).unwrap_err().to_string();
        assert!(e.contains("unsupported version 2"), "{e}");

        let e = model_from_bytes(&good[..good.len() - 9]).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");
        let e = model_from_bytes(&good[..10]).unwrap_err().to_string();
        assert!(e.contains("truncated"), "{e}");

        let mut bad = good.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x10;
        let e = model_from_bytes(&bad).unwrap_err().to_string();
        assert!(e.contains("checksum"), "{e}");
    }
}
