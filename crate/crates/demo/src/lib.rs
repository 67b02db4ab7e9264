//! Browser demo: class-code grid, a 2-D retrieval playground and SDH
//! objective traces. `www/index.html` drives these through wasm-bindgen.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use fsdh::codes::{expand_codes, pick_class_codes, sylvester};
use fsdh::dataset::synth_blobs;
use fsdh::fsdh::{fit_fsdh, optimal_weights, KernelConfig};
use fsdh::index::hamming;
use fsdh::sdh::{classification_loss, train_sdh, SdhConfig};
use fsdh::{CodeIndex, HashModel, LabelArray, PackedCodes};

fn js(e: fsdh::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Class codes as a class-major `classes x bits` grid of +-1.
pub fn code_grid(bits: usize, classes: usize) -> fsdh::Result<Vec<i8>> {
    let cc = pick_class_codes(&sylvester(bits)?, classes)?;
    let m = cc.matrix();
    Ok((0..classes).flat_map(|k| (0..bits).map(move |j| m[(j, k)])).collect())
}

#[wasm_bindgen]
pub fn class_codes(bits: usize, classes: usize) -> Result<Vec<i8>, JsError> {
    code_grid(bits, classes).map_err(js)
}

/// FSDH trained on 2-D Gaussian blobs, queried by clicking the plane.
#[wasm_bindgen]
pub struct Playground {
    points: Vec<f64>,
    labels: Vec<u32>,
    model: HashModel,
    index: CodeIndex,
}

impl Playground {
    pub fn build(
        classes: usize,
        per_class: usize,
        spread: f64,
        bits: usize,
        anchors: usize,
        sigma: f64,
        seed: u64,
    ) -> fsdh::Result<Self> {
        let data = synth_blobs(classes, per_class, 2, spread, seed)?;
        let kernel = KernelConfig { anchors: anchors.min(data.len()), sigma, seed };
        let model = fit_fsdh(&data, &kernel, bits, 1.0, None)?;
        let index = CodeIndex::new(model.encode(&data.features)?, data.labels.clone())?;
        Ok(Self {
            points: data.features.iter().copied().collect(),
            labels: data.labels.as_slice().iter().map(|&y| y as u32).collect(),
            model,
            index,
        })
    }

    fn encode_point(&self, x: f64, y: f64) -> fsdh::Result<PackedCodes> {
        self.model.encode(&DMatrix::from_column_slice(2, 1, &[x, y]))
    }

    /// Ids of training points within `radius` of the code of `(x, y)`, nearest first.
    pub fn neighbors(&self, x: f64, y: f64, radius: u32) -> fsdh::Result<Vec<u32>> {
        let q = self.encode_point(x, y)?;
        Ok(self.index.radius_search(q.code(0), radius)?.into_iter().map(|(i, _)| i as u32).collect())
    }

    /// Class whose code is nearest to the code of each grid cell, row-major.
    pub fn regions(&self, x0: f64, y0: f64, x1: f64, y1: f64, cols: usize, rows: usize) -> fsdh::Result<Vec<u8>> {
        let cc = self.model.class_codes.as_ref().expect("fsdh model has class codes");
        let targets = PackedCodes::pack(cc.matrix())?;
        let grid = DMatrix::from_fn(2, cols * rows, |d, i| {
            let (c, r) = (i % cols, i / cols);
            if d == 0 {
                x0 + (x1 - x0) * (c as f64 + 0.5) / cols as f64
            } else {
                y0 + (y1 - y0) * (r as f64 + 0.5) / rows as f64
            }
        });
        let codes = self.model.encode(&grid)?;
        (0..codes.len())
            .map(|i| {
                let mut best = (u32::MAX, 0u8);
                for k in 0..targets.len() {
                    let d = hamming(codes.code(i), targets.code(k))?;
                    if d < best.0 {
                        best = (d, k as u8);
                    }
                }
                Ok(best.1)
            })
            .collect()
    }
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(
        classes: usize,
        per_class: usize,
        spread: f64,
        bits: usize,
        anchors: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Playground, JsError> {
        Self::build(classes, per_class, spread, bits, anchors, sigma, seed).map_err(js)
    }

    /// Interleaved `x, y` coordinates.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    pub fn bits(&self) -> usize {
        self.model.bits()
    }

    /// Code of `(x, y)` as a string of 0/1, first bit first.
    pub fn code_string(&self, x: f64, y: f64) -> Result<String, JsError> {
        let q = self.encode_point(x, y).map_err(js)?;
        let b = q.unpack();
        Ok((0..b.nrows()).map(|j| if b[(j, 0)] > 0 { '1' } else { '0' }).collect())
    }

    #[wasm_bindgen(js_name = neighbors)]
    pub fn neighbors_js(&self, x: f64, y: f64, radius: u32) -> Result<Vec<u32>, JsError> {
        self.neighbors(x, y, radius).map_err(js)
    }

    #[wasm_bindgen(js_name = regions)]
    pub fn regions_js(&self, x0: f64, y0: f64, x1: f64, y1: f64, cols: usize, rows: usize) -> Result<Vec<u8>, JsError> {
        self.regions(x0, y0, x1, y1, cols, rows).map_err(js)
    }
}

/// Objective per iteration for `seeds` random starts of SDH with one sample
/// per class and no bias term; the last element is the closed-form value of
/// the Hadamard codes. Trace `s` occupies `[s * len, (s + 1) * len)`.
pub fn objective_traces(bits: usize, classes: usize, lambda: f64, iters: usize, seeds: usize) -> fsdh::Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = DMatrix::from_fn(classes, classes, |_, _| rng.random_range(-1.0..1.0));
    let labels = LabelArray::new((0..classes).collect());
    let mut out = Vec::new();
    for seed in 0..seeds as u64 {
        let cfg = SdhConfig { bits, lambda, nu: 0.0, max_iters: iters, seed, ..SdhConfig::default() };
        let (_, trajectory) = train_sdh(&x, &labels, classes, &cfg)?;
        out.extend(trajectory.iter().map(|o| o.total));
    }
    let cc = pick_class_codes(&sylvester(bits)?, classes)?;
    let w = optimal_weights(&cc, lambda)?;
    let b = expand_codes(&cc, &labels)?.map(f64::from);
    out.push(classification_loss(&w, &b, &labels)? + lambda * w.norm_squared());
    Ok(out)
}

#[wasm_bindgen]
pub fn sdh_traces(bits: usize, classes: usize, lambda: f64, iters: usize, seeds: usize) -> Result<Vec<f64>, JsError> {
    objective_traces(bits, classes, lambda, iters, seeds).map_err(js)
}
