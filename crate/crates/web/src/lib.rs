//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Everything here also builds natively so the same functions are tested
//! with `cargo test`.

use wasm_bindgen::prelude::*;

use cloudless::data::{apply_cloud, gen_clean_optical, gen_cloud_mask, gen_polsar, mix_seed, PFSAR_CHANNELS};
use cloudless::metrics::{SampleMetrics, COVERAGE_BINS};
use cloudless::Tensor;

const MAX_PATCH: usize = 256;

// JsError only exists inside a browser, so the logic reports plain strings
// and the exported wrappers convert at the boundary.
fn describe(e: cloudless::Error) -> String {
    format!("{}: {e}", e.category())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Channels `[c0, c0 + 3)` of a `(1, C, P, P)` tensor as RGBA bytes.
fn rgba(t: &Tensor, c0: usize) -> Vec<u8> {
    let [_, c, h, w] = t.shape().0;
    let plane = h * w;
    let d = t.data();
    let mut out = Vec::with_capacity(plane * 4);
    for i in 0..plane {
        for k in 0..3 {
            let ch = (c0 + k).min(c - 1);
            out.push((d[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// One synthetic scene: clean and cloudy optical images, the cloud mask and
/// a speckled radar view.
#[wasm_bindgen]
pub struct Scene {
    clean: Tensor,
    cloudy: Tensor,
    mask: Tensor,
    radar: Tensor,
    patch: usize,
}

#[wasm_bindgen]
impl Scene {
    /// `coverage` is the cloud fraction in [0, 1]; fewer `looks` means
    /// stronger speckle.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, patch: usize, coverage: f64, looks: f64) -> Result<Scene, JsError> {
        Scene::build(seed, patch, coverage, looks).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Achieved cloud fraction.
    #[wasm_bindgen(getter)]
    pub fn coverage(&self) -> f64 {
        self.mask.data().iter().sum::<f64>() / self.mask.numel() as f64
    }

    pub fn clean_rgba(&self) -> Vec<u8> {
        rgba(&self.clean, 0)
    }

    pub fn cloudy_rgba(&self) -> Vec<u8> {
        rgba(&self.cloudy, 0)
    }

    pub fn mask_rgba(&self) -> Vec<u8> {
        rgba(&self.mask, 0)
    }

    /// First three radar channels as false colour.
    pub fn radar_rgba(&self) -> Vec<u8> {
        rgba(&self.radar, 0)
    }

    /// Quality of the cloudy image against the clean one, i.e. the score of
    /// a model that changes nothing.
    pub fn metrics(&self) -> Metrics {
        Metrics(SampleMetrics::compute(&self.cloudy, &self.clean, &self.mask).expect("scene tensors agree"))
    }
}

impl Scene {
    pub fn build(seed: u32, patch: usize, coverage: f64, looks: f64) -> Result<Scene, String> {
        if !(8..=MAX_PATCH).contains(&patch) {
            return Err(format!("patch must be in 8..={MAX_PATCH}"));
        }
        if looks.is_nan() || looks < 1.0 {
            return Err("looks must be at least 1".into());
        }
        let s = mix_seed(seed as u64, 0);
        let clean = gen_clean_optical(s, patch);
        let mask = gen_cloud_mask(s, patch, coverage).map_err(describe)?;
        let cloudy = apply_cloud(&clean, &mask, s).map_err(describe)?;
        let radar = gen_polsar(&clean, s, PFSAR_CHANNELS, looks).map_err(describe)?;
        Ok(Scene {
            clean,
            cloudy,
            mask,
            radar,
            patch,
        })
    }
}

#[wasm_bindgen]
pub struct Metrics(SampleMetrics);

#[wasm_bindgen]
impl Metrics {
    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.0.psnr
    }
    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.0.ssim
    }
    #[wasm_bindgen(getter)]
    pub fn cc(&self) -> f64 {
        self.0.cc
    }
    #[wasm_bindgen(getter)]
    pub fn sam(&self) -> f64 {
        self.0.sam
    }
    #[wasm_bindgen(getter)]
    pub fn masked_l1(&self) -> f64 {
        self.0.masked_l1
    }
}

/// PSNR of the untouched cloudy image at the centre of each coverage bin.
pub fn coverage_sweep(seed: u32, patch: usize) -> Result<Vec<f64>, String> {
    (0..COVERAGE_BINS.len())
        .map(|b| Ok(Scene::build(seed, patch, 0.2 * b as f64 + 0.1, 4.0)?.metrics().psnr()))
        .collect()
}

#[wasm_bindgen(js_name = coverageSweep)]
pub fn coverage_sweep_js(seed: u32, patch: usize) -> Result<Vec<f64>, JsError> {
    coverage_sweep(seed, patch).map_err(js)
}

/// Labels matching [`coverage_sweep`].
#[wasm_bindgen(js_name = coverageBins)]
pub fn coverage_bins() -> Vec<String> {
    COVERAGE_BINS.iter().map(|s| format!("{s}%")).collect()
}
