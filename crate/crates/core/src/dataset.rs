//! Dataset pairing, sample loading and the synthetic toy dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{normalize, rgb_to_gray, Image8, NetImage, SaliencyMap};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Shared file stem of the color image and its saliency map.
    pub id: String,
    pub color: PathBuf,
    pub saliency: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub split: String,
    pub entries: Vec<DatasetEntry>,
    /// Color files skipped because every pixel has R = G = B.
    pub excluded: Vec<PathBuf>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Image files of `dir` keyed by stem. Two files sharing a stem are an error.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for item in read {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(previous) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::Dataset(format!(
                "{} and {} share the name `{stem}`",
                previous.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs color images with saliency maps by file stem, in lexicographic
/// order. Color files whose pixels are all achromatic are excluded.
pub fn build_index(color_dir: &Path, saliency_dir: &Path, split: &str) -> Result<DatasetIndex> {
    let colors = list_images(color_dir)?;
    let saliency = list_images(saliency_dir)?;
    let orphans: Vec<String> = colors
        .iter()
        .filter(|(stem, _)| !saliency.contains_key(*stem))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Dataset(format!(
            "color images without a saliency map: {}",
            orphans.join(", ")
        )));
    }
    let mut entries = Vec::with_capacity(colors.len());
    let mut excluded = Vec::new();
    for (stem, color) in colors {
        if Image8::open(&color)?.is_achromatic() {
            log::info!("excluding grayscale-encoded image {}", color.display());
            excluded.push(color);
            continue;
        }
        entries.push(DatasetEntry {
            saliency: saliency[&stem].clone(),
            id: stem,
            color,
        });
    }
    Ok(DatasetIndex {
        split: split.to_string(),
        entries,
        excluded,
    })
}

/// Grayscale input `x`, color target `c` and saliency target `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub x: NetImage,
    pub c: NetImage,
    pub s: SaliencyMap,
}

impl TrainingSample {
    /// Builds a sample from an 8-bit color image and saliency map of the
    /// same size.
    pub fn from_images(id: &str, color: &Image8, saliency: &Image8) -> Result<TrainingSample> {
        let color = color.to_rgb();
        if (color.height(), color.width()) != (saliency.height(), saliency.width()) {
            return Err(Error::Dataset(format!(
                "{id}: color is {}x{}, saliency is {}x{}",
                color.height(),
                color.width(),
                saliency.height(),
                saliency.width()
            )));
        }
        let gray = rgb_to_gray(&color)?;
        let sal = if saliency.channels() == 3 { rgb_to_gray(saliency)? } else { saliency.clone() };
        Ok(TrainingSample {
            id: id.to_string(),
            x: normalize(&gray),
            c: normalize(&color),
            s: SaliencyMap::from_image8(&sal)?,
        })
    }
}

/// Loads an entry, resizing both images bilinearly to `target_size` square.
pub fn load_sample(entry: &DatasetEntry, target_size: usize) -> Result<TrainingSample> {
    let color = Image8::open(&entry.color)?.to_rgb().resize(target_size, target_size);
    let saliency = Image8::open(&entry.saliency)?;
    let saliency = if saliency.channels() == 3 { rgb_to_gray(&saliency)? } else { saliency };
    let saliency = saliency.resize(target_size, target_size);
    TrainingSample::from_images(&entry.id, &color, &saliency)
}

/// Random access to training samples.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<TrainingSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct InMemorySource {
    samples: Vec<TrainingSample>,
}

impl InMemorySource {
    pub fn new(samples: Vec<TrainingSample>) -> InMemorySource {
        InMemorySource { samples }
    }

    /// Loads every entry of `index` up front.
    pub fn from_index(index: &DatasetIndex, target_size: usize) -> Result<InMemorySource> {
        let samples = index
            .entries
            .iter()
            .map(|e| load_sample(e, target_size))
            .collect::<Result<_>>()?;
        Ok(InMemorySource { samples })
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }
}

impl SampleSource for InMemorySource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample(&self, index: usize) -> Result<TrainingSample> {
        self.samples
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Dataset(format!("sample {index} out of range")))
    }
}

/// Decodes samples from disk on every access.
#[derive(Clone, Debug)]
pub struct DiskSource {
    pub index: DatasetIndex,
    pub target_size: usize,
}

impl SampleSource for DiskSource {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn sample(&self, index: usize) -> Result<TrainingSample> {
        let entry = self
            .index
            .entries
            .get(index)
            .ok_or_else(|| Error::Dataset(format!("sample {index} out of range")))?;
        load_sample(entry, self.target_size)
    }
}

/// A stacked batch: `x` is `N×1×H×W`, `c` is `N×3×H×W`, `s` is `N×1×H×W`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub c: Tensor,
    pub s: Tensor,
}

pub fn collate(samples: &[TrainingSample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset("cannot collate an empty batch".into()))?;
    let (h, w) = (first.c.height(), first.c.width());
    let n = samples.len();
    let mut x = Vec::with_capacity(n * h * w);
    let mut c = Vec::with_capacity(n * 3 * h * w);
    let mut s = Vec::with_capacity(n * h * w);
    for sample in samples {
        if (sample.c.height(), sample.c.width()) != (h, w) {
            return Err(Error::Dataset(format!(
                "sample {} is {}x{}, batch is {h}x{w}",
                sample.id,
                sample.c.height(),
                sample.c.width()
            )));
        }
        x.extend_from_slice(sample.x.data());
        c.extend_from_slice(sample.c.data());
        s.extend_from_slice(sample.s.data());
    }
    Ok(Batch {
        x: Tensor::new(x, &[n, 1, h, w])?,
        c: Tensor::new(c, &[n, 3, h, w])?,
        s: Tensor::new(s, &[n, 1, h, w])?,
    })
}

/// Strongly saturated bright color (HSV saturation and value ≥ 0.85).
fn chromatic_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let hue: f64 = rng.random_range(0.0..360.0);
    let sat: f64 = rng.random_range(0.85..=1.0);
    let val: f64 = rng.random_range(0.85..=1.0);
    let c = val * sat;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let m = val - c;
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to8 = |v: f64| ((v + m) * 255.0).round() as u8;
    let px = [to8(r), to8(g), to8(b)];
    if px[0] == px[1] && px[1] == px[2] {
        [255, 0, 0]
    } else {
        px
    }
}

/// One toy image: one to three filled rectangles or discs of saturated
/// colors on a uniform gray background, with the exact binary shape mask.
pub fn toy_image(size: usize, rng: &mut ChaCha8Rng) -> Result<(Image8, Image8)> {
    // Mid-gray maps to about 0 in [-1, 1], where c⊙s says nothing about s;
    // keep the background in a dark or a light band.
    let bg = if rng.random_bool(0.5) {
        rng.random_range(8u8..=48)
    } else {
        rng.random_range(208u8..=248)
    };
    let mut color = Image8::filled(size, size, &[bg, bg, bg])?.into_data();
    let mut mask = vec![0u8; size * size];
    let shapes = rng.random_range(1..=3);
    for _ in 0..shapes {
        let fill = chromatic_color(rng);
        let half = rng.random_range(size / 8..=size / 4).max(1);
        let cy = rng.random_range(half..size - half) as isize;
        let cx = rng.random_range(half..size - half) as isize;
        let disc = rng.random_bool(0.5);
        let half = half as isize;
        for y in (cy - half)..(cy + half) {
            for x in (cx - half)..(cx + half) {
                let (dy, dx) = (y - cy, x - cx);
                if disc && dy * dy + dx * dx > half * half {
                    continue;
                }
                let i = y as usize * size + x as usize;
                color[i * 3..i * 3 + 3].copy_from_slice(&fill);
                mask[i] = 255;
            }
        }
    }
    Ok((Image8::new(size, size, 3, color)?, Image8::new(size, size, 1, mask)?))
}

/// Generates `n` toy samples of side `size` (divisible by 32). When
/// `out_dir` is given the images are also written as
/// `out_dir/color/toy_NNNN.png` and `out_dir/saliency/toy_NNNN.png`.
pub fn make_toy_dataset(n: usize, size: usize, seed: u64, out_dir: Option<&Path>) -> Result<Vec<TrainingSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("toy dataset needs at least one sample".into()));
    }
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::InvalidArgument(format!("toy image size {size} is not divisible by 32")));
    }
    let dirs = match out_dir {
        Some(root) => {
            let (c, s) = (root.join("color"), root.join("saliency"));
            for d in [&c, &s] {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            Some((c, s))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("toy_{i:04}");
        let (color, mask) = toy_image(size, &mut rng)?;
        if let Some((cdir, sdir)) = &dirs {
            color.save(&cdir.join(format!("{id}.png")))?;
            mask.save(&sdir.join(format!("{id}.png")))?;
        }
        samples.push(TrainingSample::from_images(&id, &color, &mask)?);
    }
    Ok(samples)
}
