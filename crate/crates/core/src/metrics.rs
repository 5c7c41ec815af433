//! Evaluation metrics: PSNR, SSIM, the CCI colorfulness index, CCI ratio,
//! salient-patch hue statistics and directory-level reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::config::RunConfig;
use crate::dataset::list_images;
use crate::error::{Error, Result};
use crate::imaging::{hue_of, rgb_to_opponent, saturation_of, Image8, SaliencyMap};

pub const CCI_OPTIMUM: (f64, f64) = (16.0, 20.0);
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn same_shape(op: &'static str, a: &Image8, b: &Image8) -> Result<()> {
    let dims = |i: &Image8| (i.height(), i.width(), i.channels());
    if dims(a) == dims(b) {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", dims(a), dims(b))))
    }
}

/// Peak signal-to-noise ratio in dB over all channels jointly;
/// `f64::INFINITY` for identical images.
pub fn psnr(a: &Image8, b: &Image8) -> Result<f64> {
    same_shape("psnr", a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.data().len() as f64;
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Real-valued luma plane; single-channel images are used as is.
pub fn luma(img: &Image8) -> Vec<f64> {
    match img.channels() {
        1 => img.data().iter().map(|&v| f64::from(v)).collect(),
        _ => img
            .pixels()
            .map(|p| LUMA[0] * f64::from(p[0]) + LUMA[1] * f64::from(p[1]) + LUMA[2] * f64::from(p[2]))
            .collect(),
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM on luma with an 11×11 Gaussian window (σ = 1.5),
/// averaged over every window that fits inside the image.
pub fn ssim(a: &Image8, b: &Image8) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (la, lb) = (luma(a), luma(b));
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let product = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&la, h, w, &taps);
    let mu_b = filter_valid(&lb, h, w, &taps);
    let e_aa = filter_valid(&product(&la, &la), h, w, &taps);
    let e_bb = filter_valid(&product(&lb, &lb), h, w, &taps);
    let e_ab = filter_valid(&product(&la, &lb), h, w, &taps);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CciForm {
    /// `σ_rgyb + 0.3·μ_rgyb` over the opponent planes.
    #[default]
    Hasler,
    /// Mean HSV saturation plus its standard deviation, saturation in [0, 1].
    Saturation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CciRecord {
    pub cci: f64,
    pub in_optimum: bool,
}

impl CciRecord {
    pub fn new(cci: f64) -> CciRecord {
        CciRecord {
            cci,
            in_optimum: (CCI_OPTIMUM.0..=CCI_OPTIMUM.1).contains(&cci),
        }
    }
}

/// Population mean and standard deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

pub fn cci(img: &Image8, form: CciForm) -> Result<CciRecord> {
    let value = match form {
        CciForm::Hasler => {
            let opp = rgb_to_opponent(img)?;
            let (mu_rg, sd_rg) = mean_std(opp.rg.iter().copied());
            let (mu_yb, sd_yb) = mean_std(opp.yb.iter().copied());
            let sigma = (sd_rg * sd_rg + sd_yb * sd_yb).sqrt();
            let mu = (mu_rg * mu_rg + mu_yb * mu_yb).sqrt();
            sigma + 0.3 * mu
        }
        CciForm::Saturation => {
            if img.channels() != 3 {
                return Err(Error::shape("cci", format!("expected 3 channels, got {}", img.channels())));
            }
            let (mean, std) = mean_std(img.pixels().map(|p| saturation_of(p[0], p[1], p[2])));
            mean + std
        }
    };
    Ok(CciRecord::new(value))
}

/// Exact count of images whose CCI lies in the optimum range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CciRatio {
    pub in_range: usize,
    pub total: usize,
}

impl CciRatio {
    pub fn value(&self) -> f64 {
        self.in_range as f64 / self.total as f64
    }
}

impl fmt::Display for CciRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.in_range, self.total)
    }
}

pub fn cci_ratio(records: &[CciRecord]) -> Result<CciRatio> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cci_ratio of an empty set".into()));
    }
    Ok(CciRatio {
        in_range: records.iter().filter(|r| r.in_optimum).count(),
        total: records.len(),
    })
}

/// Linear-interpolation quantile (the default of most statistics packages)
/// of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot statistics: quartiles and Tukey whiskers (the most extreme data
/// within 1.5 IQR of the box).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub quartiles: [f64; 3],
    pub whiskers: [f64; 2],
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("box statistics of an empty set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = [0.25, 0.5, 0.75].map(|p| quantile(&sorted, p));
    let iqr = q[2] - q[0];
    let (lo, hi) = (q[0] - 1.5 * iqr, q[2] + 1.5 * iqr);
    let lower = sorted.iter().copied().find(|&v| v >= lo).unwrap_or(sorted[0]);
    let upper = sorted.iter().rev().copied().find(|&v| v <= hi).unwrap_or(sorted[sorted.len() - 1]);
    Ok(BoxStats {
        quartiles: q,
        whiskers: [lower, upper],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HueConfig {
    pub patch: usize,
    /// Saliency above this value counts as high.
    pub high_thresh: f64,
    /// Fraction of high pixels that makes a patch salient.
    pub coverage: f64,
    pub seed: u64,
}

impl Default for HueConfig {
    fn default() -> Self {
        HueConfig {
            patch: 64,
            high_thresh: 0.5,
            coverage: 0.8,
            seed: 0,
        }
    }
}

pub const GREEN_BLUE_HUES: (f64, f64) = (90.0, 270.0);

pub fn is_green_blue(hue: f64) -> bool {
    (GREEN_BLUE_HUES.0..GREEN_BLUE_HUES.1).contains(&hue)
}

/// Hue statistics accumulated over the patches of one region class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionHue {
    pub patches: usize,
    pub pixels: usize,
    pub chromatic_pixels: usize,
    pub green_blue_pixels: usize,
    /// One-degree bins over chromatic pixels.
    pub histogram: Vec<u64>,
    sum_cos: f64,
    sum_sin: f64,
}

impl Default for RegionHue {
    fn default() -> Self {
        RegionHue {
            patches: 0,
            pixels: 0,
            chromatic_pixels: 0,
            green_blue_pixels: 0,
            histogram: vec![0; 360],
            sum_cos: 0.0,
            sum_sin: 0.0,
        }
    }
}

impl RegionHue {
    fn add_patch(&mut self, img: &Image8, y0: usize, x0: usize, size: usize) {
        self.patches += 1;
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                let p = img.pixel(y, x);
                self.pixels += 1;
                if let Some(h) = hue_of(p[0], p[1], p[2]) {
                    self.chromatic_pixels += 1;
                    self.histogram[(h.floor() as usize).min(359)] += 1;
                    if is_green_blue(h) {
                        self.green_blue_pixels += 1;
                    }
                    let r = h.to_radians();
                    self.sum_cos += r.cos();
                    self.sum_sin += r.sin();
                }
            }
        }
    }

    pub fn merge(&mut self, other: &RegionHue) {
        self.patches += other.patches;
        self.pixels += other.pixels;
        self.chromatic_pixels += other.chromatic_pixels;
        self.green_blue_pixels += other.green_blue_pixels;
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        self.sum_cos += other.sum_cos;
        self.sum_sin += other.sum_sin;
    }

    /// Share of chromatic pixels with a green, cyan or blue hue; `None`
    /// without chromatic pixels.
    pub fn green_blue_fraction(&self) -> Option<f64> {
        (self.chromatic_pixels > 0).then(|| self.green_blue_pixels as f64 / self.chromatic_pixels as f64)
    }

    /// Circular variance `1 − R̄` of the hue angles, in [0, 1].
    pub fn circular_variance(&self) -> Option<f64> {
        (self.chromatic_pixels > 0).then(|| {
            let n = self.chromatic_pixels as f64;
            let r = (self.sum_cos * self.sum_cos + self.sum_sin * self.sum_sin).sqrt() / n;
            (1.0 - r).clamp(0.0, 1.0)
        })
    }

    fn summary(&self) -> RegionSummary {
        RegionSummary {
            patches: self.patches,
            pixels: self.pixels,
            chromatic_pixels: self.chromatic_pixels,
            green_blue_fraction: self.green_blue_fraction(),
            circular_variance: self.circular_variance(),
            histogram: self.histogram.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HueAnalysis {
    pub salient: RegionHue,
    pub unsalient: RegionHue,
    pub random: RegionHue,
}

impl HueAnalysis {
    pub fn merge(&mut self, other: &HueAnalysis) {
        self.salient.merge(&other.salient);
        self.unsalient.merge(&other.unsalient);
        self.random.merge(&other.random);
    }
}

/// Classifies the non-overlapping `patch×patch` grid of `img` into salient
/// and unsalient patches and draws as many random patch positions.
pub fn salient_patch_hue_analysis(img: &Image8, sal: &SaliencyMap, cfg: &HueConfig) -> Result<HueAnalysis> {
    let img = img.to_rgb();
    let (h, w) = (img.height(), img.width());
    if (sal.height(), sal.width()) != (h, w) {
        return Err(Error::shape(
            "salient_patch_hue_analysis",
            format!("image {h}x{w}, saliency {}x{}", sal.height(), sal.width()),
        ));
    }
    let p = cfg.patch;
    if p == 0 || h < p || w < p {
        return Err(Error::InvalidArgument(format!("patch {p} does not fit a {h}x{w} image")));
    }
    let mut out = HueAnalysis::default();
    for ty in 0..h / p {
        for tx in 0..w / p {
            let (y0, x0) = (ty * p, tx * p);
            let high = (y0..y0 + p)
                .flat_map(|y| (x0..x0 + p).map(move |x| (y, x)))
                .filter(|&(y, x)| sal.data()[y * w + x] > cfg.high_thresh)
                .count();
            if high as f64 >= cfg.coverage * (p * p) as f64 && high > 0 {
                out.salient.add_patch(&img, y0, x0, p);
            } else if high == 0 {
                out.unsalient.add_patch(&img, y0, x0, p);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..(h / p) * (w / p) {
        let y0 = rng.random_range(0..=h - p);
        let x0 = rng.random_range(0..=w - p);
        out.random.add_patch(&img, y0, x0, p);
    }
    Ok(out)
}

/// Pairs two directories by extension-insensitive basename; any file
/// without a partner is an error naming it.
pub fn pair_dirs(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let la = list_images(a)?;
    let mut lb = list_images(b)?;
    let mut pairs = Vec::with_capacity(la.len());
    let mut orphans = Vec::new();
    for (stem, pa) in la {
        match lb.remove(&stem) {
            Some(pb) => pairs.push((stem, pa, pb)),
            None => orphans.push(pa),
        }
    }
    orphans.extend(lb.into_values());
    if !orphans.is_empty() {
        let names: Vec<String> = orphans.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Dataset(format!("unmatched files: {}", names.join(", "))));
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found in {} and {}",
            a.display(),
            b.display()
        )));
    }
    Ok(pairs)
}

/// Serializes infinite values as the string "inf".
fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub file: String,
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub cci: f64,
    pub in_optimum: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub ssim: String,
    pub cci_form: CciForm,
    pub cci_optimum: [f64; 2],
    pub psnr_identical: String,
    pub quartiles: String,
    pub config: Option<RunConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "finite_or_inf")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_cci: f64,
    pub cci_ratio: f64,
    pub cci_in_range: usize,
    pub images: usize,
    pub cci_quartiles: [f64; 3],
    pub whiskers: [f64; 2],
    pub metadata: ReportMetadata,
    pub rows: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ImageMetrics>, config: Option<RunConfig>) -> Result<MetricsReport> {
        let records: Vec<CciRecord> = rows
            .iter()
            .map(|r| CciRecord {
                cci: r.cci,
                in_optimum: r.in_optimum,
            })
            .collect();
        let ratio = cci_ratio(&records)?;
        let n = rows.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let ccis: Vec<f64> = rows.iter().map(|r| r.cci).collect();
        let stats = box_stats(&ccis)?;
        Ok(MetricsReport {
            mean_psnr: mean(|r| r.psnr_db),
            mean_ssim: mean(|r| r.ssim),
            mean_cci: mean(|r| r.cci),
            cci_ratio: ratio.value(),
            cci_in_range: ratio.in_range,
            images: ratio.total,
            cci_quartiles: stats.quartiles,
            whiskers: stats.whiskers,
            metadata: ReportMetadata {
                ssim: format!(
                    "luma {LUMA:?}, gaussian window {SSIM_WINDOW}x{SSIM_WINDOW} sigma {SSIM_SIGMA}, K1 {SSIM_K1}, K2 {SSIM_K2}, L 255, valid windows, mean pooled"
                ),
                cci_form: CciForm::Hasler,
                cci_optimum: [CCI_OPTIMUM.0, CCI_OPTIMUM.1],
                psnr_identical: "inf".into(),
                quartiles: "linear interpolation; whiskers at the most extreme values within 1.5 IQR".into(),
                config,
            },
            rows,
        })
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        let mut writer = csv::Writer::from_path(&csv_path)?;
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush().map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json_path, e))
    }
}

pub fn evaluate_image(file: &str, pred: &Image8, gt: &Image8) -> Result<ImageMetrics> {
    let (pred, gt) = (pred.to_rgb(), gt.to_rgb());
    let record = cci(&pred, CciForm::Hasler)?;
    Ok(ImageMetrics {
        file: file.to_string(),
        psnr_db: psnr(&pred, &gt)?,
        ssim: ssim(&pred, &gt)?,
        cci: record.cci,
        in_optimum: record.in_optimum,
    })
}

/// PSNR, SSIM and CCI for every prediction/ground-truth pair of the two
/// directories, in basename order.
pub fn evaluate_pairs(pred_dir: &Path, gt_dir: &Path, config: Option<RunConfig>) -> Result<MetricsReport> {
    let pairs = pair_dirs(pred_dir, gt_dir)?;
    let rows = pairs
        .par_iter()
        .map(|(stem, pp, gp)| {
            let pred = Image8::open(pp)?;
            let gt = Image8::open(gp)?;
            let name = pp.file_name().map_or_else(|| stem.clone(), |n| n.to_string_lossy().into_owned());
            evaluate_image(&name, &pred, &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows, config)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionSummary {
    pub patches: usize,
    pub pixels: usize,
    pub chromatic_pixels: usize,
    pub green_blue_fraction: Option<f64>,
    pub circular_variance: Option<f64>,
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HueReport {
    pub images: usize,
    pub config: HueConfig,
    pub green_blue_hues: [f64; 2],
    pub salient: RegionSummary,
    pub unsalient: RegionSummary,
    pub random: RegionSummary,
}

impl HueReport {
    pub fn new(images: usize, config: HueConfig, analysis: &HueAnalysis) -> HueReport {
        HueReport {
            images,
            config,
            green_blue_hues: [GREEN_BLUE_HUES.0, GREEN_BLUE_HUES.1],
            salient: analysis.salient.summary(),
            unsalient: analysis.unsalient.summary(),
            random: analysis.random.summary(),
        }
    }

    /// Writes `hue_report.json` and `hue_histogram.csv` (one row per degree).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("hue_report.json");
        fs::write(&json_path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json_path, e))?;
        let csv_path = dir.join("hue_histogram.csv");
        let mut writer = csv::Writer::from_path(&csv_path)?;
        writer.write_record(["hue_deg", "salient", "unsalient", "random"])?;
        for bin in 0..360 {
            writer.write_record([
                bin.to_string(),
                self.salient.histogram[bin].to_string(),
                self.unsalient.histogram[bin].to_string(),
                self.random.histogram[bin].to_string(),
            ])?;
        }
        writer.flush().map_err(|e| Error::io(&csv_path, e))
    }
}

/// Hue analysis over every image/saliency pair of two directories. Each
/// image draws its random patches from its own stream.
pub fn analyze_hue_dirs(images: &Path, saliency: &Path, cfg: &HueConfig) -> Result<HueReport> {
    let pairs = pair_dirs(images, saliency)?;
    let per_image = pairs
        .par_iter()
        .map(|(stem, ip, sp)| {
            let img = Image8::open(ip)?;
            let sal = SaliencyMap::open(sp)?;
            let image_cfg = HueConfig {
                seed: crate::nn::derive_seed(cfg.seed, stem),
                ..*cfg
            };
            salient_patch_hue_analysis(&img, &sal, &image_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = HueAnalysis::default();
    for a in &per_image {
        total.merge(a);
    }
    Ok(HueReport::new(pairs.len(), *cfg, &total))
}

/// Per-file CCI of every image in `dir`, keyed by file stem.
pub fn cci_of_dir(dir: &Path, form: CciForm) -> Result<BTreeMap<String, CciRecord>> {
    list_images(dir)?
        .into_iter()
        .map(|(stem, path)| Ok((stem, cci(&Image8::open(&path)?.to_rgb(), form)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.random::<u8>()).collect();
        Image8::new(h, w, 3, data).unwrap()
    }

    fn psnr_oracle(a: &Image8, b: &Image8) -> f64 {
        let mut sse = 0.0;
        let mut n = 0.0;
        for y in 0..a.height() {
            for x in 0..a.width() {
                for c in 0..3 {
                    let d = f64::from(a.pixel(y, x)[c]) - f64::from(b.pixel(y, x)[c]);
                    sse += d * d;
                    n += 1.0;
                }
            }
        }
        10.0 * (255.0f64 * 255.0 / (sse / n)).log10()
    }

    /// Direct 2-D windowed SSIM with explicit sums per window.
    fn ssim_oracle(a: &Image8, b: &Image8) -> f64 {
        let (h, w) = (a.height(), a.width());
        let (la, lb) = (luma(a), luma(b));
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let norm: f64 = g.iter().flat_map(|x| g.iter().map(move |y| x * y)).sum();
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut total = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j] / norm;
                        ma += wt * la[(y0 + i) * w + x0 + j];
                        mb += wt * lb[(y0 + i) * w + x0 + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j] / norm;
                        let da = la[(y0 + i) * w + x0 + j] - ma;
                        let db = lb[(y0 + i) * w + x0 + j] - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn psnr_cases() {
        let a = random_image(9, 7, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let black = Image8::filled(4, 4, &[0, 0, 0]).unwrap();
        let white = Image8::filled(4, 4, &[255, 255, 255]).unwrap();
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        let b = random_image(9, 7, 2);
        assert!((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs() < 1e-9);
        assert!(psnr(&a, &random_image(7, 9, 2)).is_err());
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = random_image(20, 17, 3);
        let b = random_image(20, 17, 4);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_closed_form() {
        let a = Image8::filled(16, 16, &[100, 100, 100]).unwrap();
        let b = Image8::filled(16, 16, &[150, 150, 150]).unwrap();
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = (2.0 * 100.0 * 150.0 + c1) / (100.0f64.powi(2) + 150.0f64.powi(2) + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-6);
        assert!(ssim(&random_image(10, 30, 1), &random_image(10, 30, 2)).is_err());
    }

    #[test]
    fn cci_cases() {
        let gray = Image8::filled(8, 8, &[77, 77, 77]).unwrap();
        assert_eq!(cci(&gray, CciForm::Hasler).unwrap().cci, 0.0);
        assert_eq!(cci(&gray, CciForm::Saturation).unwrap().cci, 0.0);
        let red = Image8::filled(8, 8, &[255, 0, 0]).unwrap();
        let r = cci(&red, CciForm::Hasler).unwrap();
        assert!((r.cci - 85.53).abs() < 0.01, "{}", r.cci);
        assert!(!r.in_optimum);
        assert_eq!(cci(&red, CciForm::Saturation).unwrap().cci, 1.0);
        assert!(CciRecord::new(16.0).in_optimum && CciRecord::new(20.0).in_optimum);
        assert!(!CciRecord::new(20.000001).in_optimum);
    }

    #[test]
    fn ratio_and_box_stats() {
        assert!(cci_ratio(&[]).is_err());
        let recs = [CciRecord::new(17.0), CciRecord::new(3.0), CciRecord::new(19.0), CciRecord::new(40.0)];
        let ratio = cci_ratio(&recs).unwrap();
        assert_eq!((ratio.in_range, ratio.total), (2, 4));
        assert_eq!(ratio.value(), 0.5);
        let stats = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(stats.quartiles, [2.0, 3.0, 4.0]);
        assert_eq!(stats.whiskers, [1.0, 4.0]);
    }

    #[test]
    fn hue_analysis_trivial_cases() {
        let green = Image8::filled(128, 128, &[0, 200, 0]).unwrap();
        let ones = SaliencyMap::filled(128, 128, 1.0).unwrap();
        let a = salient_patch_hue_analysis(&green, &ones, &HueConfig::default()).unwrap();
        assert_eq!(a.salient.patches, 4);
        assert_eq!(a.salient.green_blue_fraction(), Some(1.0));
        assert_eq!(a.unsalient.patches, 0);
        assert_eq!(a.unsalient.green_blue_fraction(), None);
        assert_eq!(a.salient.circular_variance().map(|v| v < 1e-12), Some(true));

        let red = Image8::filled(128, 96, &[220, 10, 10]).unwrap();
        let zeros = SaliencyMap::filled(128, 96, 0.0).unwrap();
        let a = salient_patch_hue_analysis(&red, &zeros, &HueConfig::default()).unwrap();
        assert_eq!(a.unsalient.green_blue_fraction(), Some(0.0));
        assert_eq!(a.random.green_blue_fraction(), Some(0.0));
        assert_eq!(a.random.patches, 2);
        let small = HueConfig {
            patch: 32,
            ..HueConfig::default()
        };
        assert_eq!(salient_patch_hue_analysis(&red, &zeros, &small).unwrap().unsalient.patches, 12);
        assert!(salient_patch_hue_analysis(&Image8::filled(32, 32, &[1, 2, 3]).unwrap(), &SaliencyMap::filled(32, 32, 0.0).unwrap(), &HueConfig::default()).is_err());
    }

    #[test]
    fn inf_sentinel_in_json() {
        let img = random_image(16, 16, 5);
        let row = evaluate_image("a.png", &img, &img).unwrap();
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains("\"psnr_db\":\"inf\""), "{json}");
        let report = MetricsReport::from_rows(vec![row], None).unwrap();
        assert!(serde_json::to_string(&report).unwrap().contains("\"mean_psnr\":\"inf\""));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cci_is_permutation_and_shift_invariant(seed in any::<u64>(), shift in 0u8..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<[u8; 3]> = (0..64).map(|_| [rng.random_range(0..200), rng.random_range(0..200), rng.random_range(0..200)]).collect();
            let img = Image8::new(8, 8, 3, px.concat()).unwrap();
            let mut rev = px.clone();
            rev.reverse();
            let permuted = Image8::new(8, 8, 3, rev.concat()).unwrap();
            let shifted = Image8::new(8, 8, 3, px.iter().flat_map(|p| p.map(|v| v + shift)).collect()).unwrap();
            let base = cci(&img, CciForm::Hasler).unwrap().cci;
            prop_assert!((cci(&permuted, CciForm::Hasler).unwrap().cci - base).abs() < 1e-9);
            prop_assert!((cci(&shifted, CciForm::Hasler).unwrap().cci - base).abs() < 1e-9);
        }

        #[test]
        fn ssim_is_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random_image(12, 13, s1);
            let b = random_image(12, 13, s2);
            let ab = ssim(&a, &b).unwrap();
            prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn hue_fractions_partition(seed in any::<u64>()) {
            let img = random_image(64, 64, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let sal = SaliencyMap::new(64, 64, (0..64 * 64).map(|_| rng.random::<f64>()).collect()).unwrap();
            let cfg = HueConfig { patch: 16, ..HueConfig::default() };
            let a = salient_patch_hue_analysis(&img, &sal, &cfg).unwrap();
            for region in [&a.salient, &a.unsalient, &a.random] {
                prop_assert_eq!(region.histogram.iter().sum::<u64>() as usize, region.chromatic_pixels);
                if let Some(f) = region.green_blue_fraction() {
                    let other = (region.chromatic_pixels - region.green_blue_pixels) as f64 / region.chromatic_pixels as f64;
                    prop_assert!((f + other - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
