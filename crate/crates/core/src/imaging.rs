//! Image types, value-range conversions and color-space transforms.

use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit image with interleaved (HWC) storage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image8 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image8 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Image8> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "Image8::new",
                format!("{} values for {height}x{width}x{channels}", data.len()),
            ));
        }
        Ok(Image8 {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, pixel: &[u8]) -> Result<Image8> {
        let data = pixel.iter().copied().cycle().take(height * width * pixel.len()).collect();
        Image8::new(height, width, pixel.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, u8> {
        self.data.chunks_exact(self.channels)
    }

    pub fn is_achromatic(&self) -> bool {
        self.channels == 1 || self.pixels().all(|p| p[0] == p[1] && p[1] == p[2])
    }

    /// Expands a single-channel image to three equal channels.
    pub fn to_rgb(&self) -> Image8 {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image8 {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    fn require_rgb(&self, op: &'static str) -> Result<()> {
        if self.channels == 3 {
            Ok(())
        } else {
            Err(Error::shape(op, format!("expected 3 channels, got {}", self.channels)))
        }
    }

    pub fn from_dynamic(img: DynamicImage) -> Image8 {
        if img.color().has_color() {
            let rgb = img.into_rgb8();
            let (w, h) = rgb.dimensions();
            Image8 {
                height: h as usize,
                width: w as usize,
                channels: 3,
                data: rgb.into_raw(),
            }
        } else {
            let gray = img.into_luma8();
            let (w, h) = gray.dimensions();
            Image8 {
                height: h as usize,
                width: w as usize,
                channels: 1,
                data: gray.into_raw(),
            }
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        let data = self.data.clone();
        if self.channels == 3 {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, data).expect("length checked"))
        } else {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, data).expect("length checked"))
        }
    }

    pub fn open(path: &Path) -> Result<Image8> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Image8::from_dynamic(img))
    }

    /// Writes the image; the format follows the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_dynamic().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resize; a no-op when the size already matches.
    pub fn resize(&self, height: usize, width: usize) -> Image8 {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let resized = self
            .to_dynamic()
            .resize_exact(width as u32, height as u32, FilterType::Triangle);
        let mut out = Image8::from_dynamic(resized);
        if self.channels == 3 && out.channels == 1 {
            out = out.to_rgb();
        }
        out
    }
}

/// Floating-point image in network range, planar (CHW) storage.
#[derive(Clone, Debug, PartialEq)]
pub struct NetImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl NetImage {
    /// Values are clamped to [-1, 1]; non-finite input is rejected.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<NetImage> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "NetImage::new",
                format!("{} values for {channels}x{height}x{width}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("NetImage values".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(NetImage {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// A `1×C×H×W` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[1, self.channels, self.height, self.width])
            .expect("length checked at construction")
    }

    /// Extracts sample `index` of an `N×C×H×W` batch.
    pub fn from_batch(batch: &Tensor, index: usize) -> Result<NetImage> {
        let (n, c, h, w) = batch.dims4()?;
        if index >= n {
            return Err(Error::shape("NetImage::from_batch", format!("index {index} of {n}")));
        }
        let plane = c * h * w;
        NetImage::new(h, w, c, batch.data()[index * plane..(index + 1) * plane].to_vec())
    }
}

/// Single-channel map with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    /// Values are clamped to [0, 1]; non-finite input is rejected.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<SaliencyMap> {
        if data.len() != height * width {
            return Err(Error::shape(
                "SaliencyMap::new",
                format!("{} values for {height}x{width}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("saliency values".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(SaliencyMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<SaliencyMap> {
        SaliencyMap::new(height, width, vec![value; height * width])
    }

    /// Linear map of an 8-bit single-channel image: 255 becomes exactly 1.
    pub fn from_image8(img: &Image8) -> Result<SaliencyMap> {
        if img.channels() != 1 {
            return Err(Error::shape(
                "SaliencyMap::from_image8",
                format!("expected 1 channel, got {}", img.channels()),
            ));
        }
        let data = img.data().iter().map(|&v| f64::from(v) / 255.0).collect();
        SaliencyMap::new(img.height(), img.width(), data)
    }

    pub fn to_image8(&self) -> Image8 {
        let data = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        Image8::new(self.height, self.width, 1, data).expect("length checked")
    }

    /// Reads a saliency PNG, converting color files to luma.
    pub fn open(path: &Path) -> Result<SaliencyMap> {
        let img = Image8::open(path)?;
        let gray = if img.channels() == 3 { rgb_to_gray(&img)? } else { img };
        SaliencyMap::from_image8(&gray)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[1, 1, self.height, self.width]).expect("length checked")
    }

    pub fn from_batch(batch: &Tensor, index: usize) -> Result<SaliencyMap> {
        let (n, c, h, w) = batch.dims4()?;
        if c != 1 || index >= n {
            return Err(Error::shape(
                "SaliencyMap::from_batch",
                format!("sample {index} of {n}x{c}x{h}x{w}"),
            ));
        }
        SaliencyMap::new(h, w, batch.data()[index * h * w..(index + 1) * h * w].to_vec())
    }
}

/// A color image multiplied by a saliency map.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedImage(NetImage);

impl WeightedImage {
    pub fn image(&self) -> &NetImage {
        &self.0
    }

    pub fn into_image(self) -> NetImage {
        self.0
    }
}

/// Opponent color planes in real arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct OpponentImage {
    pub height: usize,
    pub width: usize,
    /// R − G
    pub rg: Vec<f64>,
    /// (R + G)/2 − B
    pub yb: Vec<f64>,
}

/// Per-pixel HSV hue in degrees; `None` marks achromatic pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct HueMap {
    pub height: usize,
    pub width: usize,
    pub hue: Vec<Option<f64>>,
}

impl HueMap {
    pub fn get(&self, y: usize, x: usize) -> Option<f64> {
        self.hue[y * self.width + x]
    }
}

/// Maps `[0, 255]` to `[-1, 1]` via `v / 127.5 - 1`; output is planar.
pub fn normalize(img: &Image8) -> NetImage {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0; h * w * c];
    for (i, px) in img.pixels().enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + i] = f64::from(v) / 127.5 - 1.0;
        }
    }
    NetImage {
        height: h,
        width: w,
        channels: c,
        data,
    }
}

/// Inverse of [`normalize`], clamping out-of-range values.
pub fn denormalize(img: &NetImage) -> Result<Image8> {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut data = vec![0u8; h * w * c];
    for ch in 0..c {
        for i in 0..h * w {
            let v = img.data[ch * h * w + i];
            if !v.is_finite() {
                return Err(Error::NonFinite("denormalize".into()));
            }
            data[i * c + ch] = (v.clamp(-1.0, 1.0) * 127.5 + 127.5).round() as u8;
        }
    }
    Image8::new(h, w, c, data)
}

/// Same as [`denormalize`] for raw network output that may exceed the range.
pub fn denormalize_values(height: usize, width: usize, channels: usize, planar: &[f64]) -> Result<Image8> {
    if planar.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denormalize".into()));
    }
    denormalize(&NetImage::new(height, width, channels, planar.to_vec())?)
}

/// BT.601 luma, rounded to the nearest integer.
pub fn rgb_to_gray(img: &Image8) -> Result<Image8> {
    img.require_rgb("rgb_to_gray")?;
    let data = img
        .pixels()
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().min(255.0) as u8
        })
        .collect();
    Image8::new(img.height(), img.width(), 1, data)
}

/// Multiplies every channel of `color` by the saliency map.
pub fn apply_saliency_weight(color: &NetImage, sal: &SaliencyMap) -> Result<WeightedImage> {
    if color.height != sal.height || color.width != sal.width {
        return Err(Error::shape(
            "apply_saliency_weight",
            format!(
                "image {}x{} vs saliency {}x{}",
                color.height, color.width, sal.height, sal.width
            ),
        ));
    }
    let plane = color.height * color.width;
    let data = color
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| v * sal.data[i % plane])
        .collect();
    Ok(WeightedImage(NetImage {
        data,
        ..color.clone()
    }))
}

pub fn rgb_to_opponent(img: &Image8) -> Result<OpponentImage> {
    img.require_rgb("rgb_to_opponent")?;
    let (rg, yb) = img
        .pixels()
        .map(|p| {
            let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
            (r - g, (r + g) / 2.0 - b)
        })
        .unzip();
    Ok(OpponentImage {
        height: img.height(),
        width: img.width(),
        rg,
        yb,
    })
}

/// HSV hue in degrees, `None` when R = G = B.
pub fn hue_of(r: u8, g: u8, b: u8) -> Option<f64> {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return None;
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = h.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    Some(if h >= 360.0 { 0.0 } else { h })
}

/// HSV saturation in [0, 1]; zero for black.
pub fn saturation_of(r: u8, g: u8, b: u8) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    }
}

pub fn rgb_to_hue(img: &Image8) -> Result<HueMap> {
    img.require_rgb("rgb_to_hue")?;
    Ok(HueMap {
        height: img.height(),
        width: img.width(),
        hue: img.pixels().map(|p| hue_of(p[0], p[1], p[2])).collect(),
    })
}
