//! Synthetic multimodal samples: smooth optical fields, speckled radar
//! derivatives and procedural cloud masks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::metrics::{COVERAGE_BINS, LAND_COVER};
use crate::model::SarInput;
use crate::ops::sigmoid;
use crate::tensor::Tensor;

pub const OPT_CHANNELS: usize = 4;
pub const PFSAR_CHANNELS: usize = 9;
pub const BCFSAR_CHANNELS: usize = 3;
/// Equivalent number of looks of the speckle.
pub const LOOKS: f64 = 4.0;
/// Correlation between any two optical channels before normalization.
pub const CHANNEL_CORRELATION: f64 = 0.6;
const OCTAVES: [(usize, f64); 3] = [(4, 1.0), (8, 0.5), (16, 0.25)];
const MASK_GRID: usize = 8;
/// Share of samples in the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, tag))
}

/// Random lattice of `(grid + 1)^2` values bilinearly interpolated to
/// `p x p`, row-major.
pub fn value_noise(rng: &mut impl Rng, grid: usize, p: usize) -> Vec<f64> {
    let g1 = grid + 1;
    let lattice: Vec<f64> = (0..g1 * g1).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; p * p];
    let scale = grid as f64 / p as f64;
    for y in 0..p {
        let fy = (y as f64 + 0.5) * scale;
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        for x in 0..p {
            let fx = (x as f64 + 0.5) * scale;
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let l = |yy: usize, xx: usize| lattice[yy * g1 + xx];
            let top = l(y0, x0) * (1.0 - tx) + l(y0, x0 + 1) * tx;
            let bot = l(y0 + 1, x0) * (1.0 - tx) + l(y0 + 1, x0 + 1) * tx;
            out[y * p + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

fn fractal(rng: &mut impl Rng, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for (grid, w) in OCTAVES {
        for (o, v) in out.iter_mut().zip(value_noise(rng, grid, p)) {
            *o += w * v;
        }
    }
    out
}

fn min_max(v: &mut [f64]) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for x in v.iter_mut() {
        *x = if span > 0.0 { (*x - lo) / span } else { 0.5 };
    }
}

/// Clean 4-band image `(1, 4, p, p)` in [0, 1].
pub fn gen_clean_optical(seed: u64, p: usize) -> Tensor {
    let mut r = rng(seed, 1);
    let shared = fractal(&mut r, p);
    let (a, b) = (CHANNEL_CORRELATION.sqrt(), (1.0 - CHANNEL_CORRELATION).sqrt());
    let mut data = Vec::with_capacity(OPT_CHANNELS * p * p);
    for _ in 0..OPT_CHANNELS {
        let own = fractal(&mut r, p);
        let mut ch: Vec<f64> = shared.iter().zip(&own).map(|(s, o)| a * s + b * o).collect();
        min_max(&mut ch);
        data.extend(ch);
    }
    Tensor::new([1, OPT_CHANNELS, p, p], data).expect("optical shape")
}

/// Fixed mixing map from the optical bands to `channels` radar features.
pub fn mixing_map(channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(0x5a52_5f4d_4958, channels as u64);
    let m: Vec<f64> = (0..channels * OPT_CHANNELS)
        .map(|_| 4.0 * (r.random::<f64>() - 0.5))
        .collect();
    // centre each output around zero for a mid-grey input
    let bias = (0..channels)
        .map(|i| -0.5 * m[i * OPT_CHANNELS..][..OPT_CHANNELS].iter().sum::<f64>())
        .collect();
    (m, bias)
}

/// Noise-free radar signal `sigmoid(M x + b)`.
pub fn polsar_signal(clean: &Tensor, channels: usize) -> Result<Tensor> {
    let [n, c, h, w] = clean.shape().0;
    if c != OPT_CHANNELS {
        return Err(Error::Invalid(format!("radar synthesis needs {OPT_CHANNELS} bands, got {c}")));
    }
    let (m, bias) = mixing_map(channels);
    let plane = h * w;
    let cd = clean.data();
    let mut out = vec![0.0; n * channels * plane];
    for b in 0..n {
        for o in 0..channels {
            for p in 0..plane {
                let mut z = bias[o];
                for i in 0..c {
                    z += m[o * c + i] * cd[(b * c + i) * plane + p];
                }
                out[(b * channels + o) * plane + p] = sigmoid(z);
            }
        }
    }
    Tensor::new([n, channels, h, w], out)
}

/// Radar features: the mixed signal times unit-mean Gamma speckle with
/// `looks` looks, clipped to [0, 1].
pub fn gen_polsar(clean: &Tensor, seed: u64, channels: usize, looks: f64) -> Result<Tensor> {
    let signal = polsar_signal(clean, channels)?;
    let gamma = Gamma::new(looks, 1.0 / looks).map_err(|e| Error::Invalid(format!("looks {looks}: {e}")))?;
    let mut r = rng(seed, 2 + channels as u64);
    let mut out = signal;
    for v in out.data_mut() {
        *v = (*v * gamma.sample(&mut r)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Binary mask `(1, 1, p, p)` covering `round(target * p^2)` pixels: the
/// highest values of a smooth noise field.
pub fn gen_cloud_mask(seed: u64, p: usize, target: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Invalid(format!("coverage {target} outside [0, 1]")));
    }
    let k = (target * (p * p) as f64).round() as usize;
    mask_with_count(seed, p, k)
}

fn mask_with_count(seed: u64, p: usize, k: usize) -> Result<Tensor> {
    let field = value_noise(&mut rng(seed, 3), MASK_GRID, p);
    let mut order: Vec<usize> = (0..p * p).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut m = vec![0.0; p * p];
    for &i in &order[..k] {
        m[i] = 1.0;
    }
    Tensor::new([1, 1, p, p], m)
}

/// Fill masked pixels with near-white cloud, `0.9 + 0.1 u`.
pub fn apply_cloud(clean: &Tensor, mask: &Tensor, seed: u64) -> Result<Tensor> {
    let [n, c, h, w] = clean.shape().0;
    if mask.shape().0 != [n, 1, h, w] {
        return Err(Error::Invalid(format!("mask {} does not fit image {}", mask.shape(), clean.shape())));
    }
    let mut r = rng(seed, 4);
    let plane = h * w;
    let mut out = clean.clone();
    let od = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for p in 0..plane {
                let u: f64 = r.random();
                if mask.data()[b * plane + p] != 0.0 {
                    od[(b * c + ch) * plane + p] = 0.9 + 0.1 * u;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// One line of the dataset manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// Sample directory relative to the dataset root.
    pub path: String,
    pub role: Role,
    pub coverage_bin: usize,
    pub class_label: usize,
    pub coverage: f64,
}

/// One training item, every tensor with a leading batch extent of 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloudy: Tensor,
    pub clean: Tensor,
    pub mask: Tensor,
    pub pfsar: Tensor,
    pub bcfsar: Tensor,
    pub coverage_bin: usize,
    pub class_label: usize,
}

impl Sample {
    /// Radar input for the given selection.
    pub fn sar(&self, sel: SarInput) -> Option<Tensor> {
        match sel {
            SarInput::Pfsar => Some(self.pfsar.clone()),
            SarInput::Bcfsar => Some(self.bcfsar.clone()),
            SarInput::Both => {
                let mut d = self.pfsar.data().to_vec();
                d.extend_from_slice(self.bcfsar.data());
                let [n, _, h, w] = self.pfsar.shape().0;
                Some(Tensor::new([n, PFSAR_CHANNELS + BCFSAR_CHANNELS, h, w], d).expect("stacked radar"))
            }
            SarInput::None => None,
        }
    }

    pub fn coverage(&self) -> f64 {
        self.mask.mean()
    }
}

/// Pixel-count range `[lo, hi]` of a coverage bin for a `p x p` patch.
pub fn bin_pixel_range(bin: usize, p: usize) -> (usize, usize) {
    let total = p * p;
    let edge = |k: usize| (k as f64 * 0.2 * total as f64).ceil() as usize;
    let lo = edge(bin);
    let hi = if bin + 1 == COVERAGE_BINS.len() { total } else { edge(bin + 1) - 1 };
    (lo, hi)
}

/// Number of training samples out of `count`.
pub fn train_count(count: usize) -> usize {
    (TRAIN_FRACTION * count as f64).round() as usize
}

/// Sample `index` of the dataset seeded by `seed`. Bins and classes cycle
/// with the index.
pub fn gen_sample(seed: u64, index: usize, p: usize) -> Result<Sample> {
    let s = mix_seed(seed, index as u64);
    let coverage_bin = index % COVERAGE_BINS.len();
    let class_label = index % LAND_COVER.len();
    let (lo, hi) = bin_pixel_range(coverage_bin, p);
    let k = rng(s, 5).random_range(lo..=hi);
    let clean = gen_clean_optical(s, p);
    let mask = mask_with_count(s, p, k)?;
    let cloudy = apply_cloud(&clean, &mask, s)?;
    let pfsar = gen_polsar(&clean, s, PFSAR_CHANNELS, LOOKS)?;
    let bcfsar = gen_polsar(&clean, s, BCFSAR_CHANNELS, LOOKS)?;
    Ok(Sample {
        cloudy,
        clean,
        mask,
        pfsar,
        bcfsar,
        coverage_bin,
        class_label,
    })
}

/// Manifest records of a `count`-sample dataset; the last 20 % of indices
/// form the test split, which therefore spans every bin once `count >= 25`.
pub fn plan_dataset(seed: u64, count: usize, p: usize) -> Result<Vec<(Record, Sample)>> {
    let n_train = train_count(count);
    (0..count)
        .map(|i| {
            let s = gen_sample(seed, i, p)?;
            let rec = Record {
                path: format!("sample_{i:05}"),
                role: if i < n_train { Role::Train } else { Role::Test },
                coverage_bin: s.coverage_bin,
                class_label: s.class_label,
                coverage: s.coverage(),
            };
            Ok((rec, s))
        })
        .collect()
}

const FILES: [&str; 5] = ["cloudy", "clean", "mask", "pfsar", "bcfsar"];
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "path\trole\tcoverage_bin\tclass_label\tcoverage";

/// Generate and write a dataset under `dir`. Returns the records.
pub fn write_dataset(dir: impl AsRef<Path>, seed: u64, count: usize, p: usize) -> Result<Vec<Record>> {
    let dir = dir.as_ref();
    let planned = plan_dataset(seed, count, p)?;
    for (rec, s) in &planned {
        let sd = dir.join(&rec.path);
        fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
        for (name, t) in FILES.iter().zip([&s.cloudy, &s.clean, &s.mask, &s.pfsar, &s.bcfsar]) {
            write_tensor(sd.join(format!("{name}.podf")), t)?;
        }
    }
    let records: Vec<Record> = planned.into_iter().map(|(r, _)| r).collect();
    write_manifest(dir.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

pub fn manifest_text(records: &[Record]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.path,
            r.role.name(),
            COVERAGE_BINS[r.coverage_bin],
            LAND_COVER[r.class_label],
            r.coverage
        )
        .expect("string write");
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest_text(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(text: &str) -> Result<Vec<Record>> {
    let bad = |line: usize, detail: String| Error::Format {
        what: "manifest",
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(bad(1, "missing header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let no = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            let [path, role, bin, class, cov] = f[..] else {
                return Err(bad(no, format!("expected 5 fields, got {}", f.len())));
            };
            let role = match role {
                "train" => Role::Train,
                "test" => Role::Test,
                r => return Err(bad(no, format!("unknown role {r}"))),
            };
            let coverage_bin = COVERAGE_BINS
                .iter()
                .position(|&b| b == bin)
                .ok_or_else(|| bad(no, format!("unknown bin {bin}")))?;
            let class_label = LAND_COVER
                .iter()
                .position(|&c| c == class)
                .ok_or_else(|| bad(no, format!("unknown class {class}")))?;
            let coverage = cov
                .parse::<f64>()
                .map_err(|e| bad(no, format!("coverage {cov}: {e}")))?;
            Ok(Record {
                path: path.to_string(),
                role,
                coverage_bin,
                class_label,
                coverage,
            })
        })
        .collect()
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text)
}

pub fn load_sample(dir: impl AsRef<Path>, rec: &Record) -> Result<Sample> {
    let sd: PathBuf = dir.as_ref().join(&rec.path);
    let get = |name: &str| read_tensor(sd.join(format!("{name}.podf")));
    Ok(Sample {
        cloudy: get("cloudy")?,
        clean: get("clean")?,
        mask: get("mask")?,
        pfsar: get("pfsar")?,
        bcfsar: get("bcfsar")?,
        coverage_bin: rec.coverage_bin,
        class_label: rec.class_label,
    })
}

/// Load every sample of one split.
pub fn load_split(dir: impl AsRef<Path>, role: Role) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "data directory missing")));
    }
    read_manifest(dir)?
        .iter()
        .filter(|r| r.role == role)
        .map(|r| load_sample(dir, r))
        .collect()
}
