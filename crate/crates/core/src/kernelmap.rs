//! RBF anchor features: `x -> [exp(-||x - a_m||^2 / sigma)]_m`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::RawDataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Squared distances below this fraction of `||x||^2 + ||a||^2` are recomputed
/// directly, since the expanded form loses them to cancellation.
const CANCELLATION_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMap {
    /// `D x M`, one anchor per column.
    anchors: DMatrix<f64>,
    sigma: f64,
}

impl KernelMap {
    pub fn new(anchors: DMatrix<f64>, sigma: f64) -> Result<Self> {
        if anchors.ncols() == 0 {
            return Err(Error::invalid("kernel map needs at least one anchor"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if anchors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("anchors must be finite"));
        }
        Ok(Self { anchors, sigma })
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn source_dim(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.ncols()
    }

    /// Maps `D x K` samples to `M x K` kernel features.
    pub fn transform(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if samples.nrows() != self.source_dim() {
            return Err(Error::DimensionMismatch {
                what: "sample dimension vs kernel source dimension",
                expected: self.source_dim(),
                actual: samples.nrows(),
            });
        }
        let m = self.anchor_count();
        let k = samples.ncols();
        let anchor_sq: Vec<f64> = self.anchors.column_iter().map(|a| a.norm_squared()).collect();
        let sample_sq: Vec<f64> = samples.column_iter().map(|x| x.norm_squared()).collect();
        // ||x - a||^2 = ||x||^2 + ||a||^2 - 2 a^T x
        let mut out = linalg::tr_mul(&self.anchors, samples);
        debug_assert_eq!(out.shape(), (m, k));
        let inv_sigma = 1.0 / self.sigma;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let xs = samples.column(j);
            for (i, v) in col.iter_mut().enumerate() {
                let scale = sample_sq[j] + anchor_sq[i];
                let mut d2 = scale - 2.0 * *v;
                if d2 <= CANCELLATION_GUARD * scale {
                    d2 = xs
                        .iter()
                        .zip(self.anchors.column(i).iter())
                        .map(|(x, a)| (x - a) * (x - a))
                        .sum();
                }
                *v = (-d2.max(0.0) * inv_sigma).exp();
            }
        }
        Ok(out)
    }
}

/// Draws `anchor_count` distinct training samples as anchors.
pub fn fit_anchors(
    dataset: &RawDataset,
    anchor_count: usize,
    sigma: f64,
    seed: u64,
) -> Result<KernelMap> {
    let idx = anchor_indices(dataset.len(), anchor_count, seed)?;
    let d = dataset.dim();
    let mut anchors = DMatrix::<f64>::zeros(d, anchor_count);
    for (m, &i) in idx.iter().enumerate() {
        anchors.set_column(m, &dataset.features.column(i));
    }
    KernelMap::new(anchors, sigma)
}

/// The sample indices [`fit_anchors`] picks: uniform without replacement.
pub fn anchor_indices(sample_count: usize, anchor_count: usize, seed: u64) -> Result<Vec<usize>> {
    if anchor_count == 0 {
        return Err(Error::invalid("anchor count must be positive"));
    }
    if anchor_count > sample_count {
        return Err(Error::BudgetExceeded {
            what: "anchor count",
            requested: anchor_count,
            limit: sample_count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, sample_count, anchor_count).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_blobs;

    fn naive_transform(map: &KernelMap, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(map.anchor_count(), samples.ncols());
        for k in 0..samples.ncols() {
            for m in 0..map.anchor_count() {
                let mut d2 = 0.0;
                for d in 0..samples.nrows() {
                    let diff = samples[(d, k)] - map.anchors()[(d, m)];
                    d2 += diff * diff;
                }
                out[(m, k)] = (-d2 / map.sigma()).exp();
            }
        }
        out
    }

    #[test]
    fn full_anchor_draw_is_a_permutation() {
        let mut idx = anchor_indices(5, 5, 42).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn anchors_are_deterministic_per_seed() {
        assert_eq!(anchor_indices(100, 10, 9).unwrap(), anchor_indices(100, 10, 9).unwrap());
        assert!(matches!(
            anchor_indices(4, 5, 0),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn anchor_itself_maps_to_one() {
        let ds = synth_blobs(2, 4, 3, 0.5, 3).unwrap();
        let map = fit_anchors(&ds, 4, 0.4, 1).unwrap();
        let out = map.transform(map.anchors()).unwrap();
        for i in 0..4 {
            assert_eq!(out[(i, i)], 1.0);
        }
        assert!(out.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn distance_equal_to_sigma_gives_inverse_e() {
        let map = KernelMap::new(DMatrix::from_column_slice(2, 1, &[0.0, 0.0]), 0.25).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[0.3, 0.4]);
        let v = map.transform(&x).unwrap()[(0, 0)];
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn agrees_with_double_loop() {
        let anchors = DMatrix::from_fn(3, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.21 - 0.4);
        let samples = DMatrix::from_fn(3, 4, |i, j| ((i * 2 + j * 11) % 5) as f64 * 0.33 - 0.6);
        let map = KernelMap::new(anchors, 0.7).unwrap();
        let fast = map.transform(&samples).unwrap();
        let slow = naive_transform(&map, &samples);
        assert!((fast - slow).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let map = KernelMap::new(DMatrix::zeros(3, 2), 1.0).unwrap();
        assert!(matches!(
            map.transform(&DMatrix::zeros(4, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
