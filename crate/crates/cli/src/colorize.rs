use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use scgan_core::dataset::list_images;
use scgan_core::imaging::{apply_saliency_weight, denormalize, normalize, rgb_to_gray};
use scgan_core::tensor::no_grad;
use scgan_core::{Generator, Image8, Mode, NetImage, SaliencyMap, Trainer};

use crate::ColorizeArgs;

/// Nearest positive multiple of `unit`.
fn snap(len: usize, unit: usize) -> usize {
    (((len + unit / 2) / unit) * unit).max(unit)
}

fn inputs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let found: Vec<_> = list_images(path)?.into_iter().collect();
        if found.is_empty() {
            bail!("no images in {}", path.display());
        }
        Ok(found)
    } else {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("{} has no usable file name", path.display()))?;
        Ok(vec![(stem.to_string(), path.to_path_buf())])
    }
}

struct Colorized {
    color: Image8,
    saliency: Image8,
    weighted: Image8,
}

fn colorize_one(generator: &mut Generator, path: &Path) -> Result<Colorized> {
    let img = Image8::open(path)?;
    let gray = match img.channels() {
        1 => img,
        _ => rgb_to_gray(&img.to_rgb())?,
    };
    let (h, w) = (gray.height(), gray.width());
    let unit = generator.config().size_unit();
    let (nh, nw) = (snap(h, unit), snap(w, unit));
    if (nh, nw) != (h, w) {
        log::warn!(
            "{}: {h}x{w} is not divisible by {unit}; running at {nh}x{nw} and resizing back",
            path.display()
        );
    }
    let x = normalize(&gray.resize(nh, nw)).to_tensor();
    let out = {
        let _guard = no_grad();
        generator.forward(&x, Mode::Eval)?
    };
    let color = NetImage::from_batch(&out.color, 0)?;
    let saliency = SaliencyMap::from_batch(&out.saliency, 0)?;
    let weighted = apply_saliency_weight(&color, &saliency)?;
    Ok(Colorized {
        color: denormalize(&color)?.resize(h, w),
        saliency: saliency.to_image8().resize(h, w),
        weighted: denormalize(weighted.image())?.resize(h, w),
    })
}

pub fn run(args: &ColorizeArgs) -> Result<()> {
    let (_, mut generator) = Trainer::load_generator(&args.checkpoint)
        .with_context(|| format!("loading generator from {}", args.checkpoint.display()))?;
    let files = inputs(&args.input)?;
    let (sal_dir, weighted_dir) = (args.output.join("saliency"), args.output.join("weighted"));
    for (dir, wanted) in [(&args.output, true), (&sal_dir, args.save_saliency), (&weighted_dir, args.save_weighted)] {
        if wanted {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    for (stem, path) in &files {
        let result = colorize_one(&mut generator, path).with_context(|| format!("colorizing {}", path.display()))?;
        result.color.save(&args.output.join(format!("{stem}.png")))?;
        if args.save_saliency {
            result.saliency.save(&sal_dir.join(format!("{stem}.png")))?;
        }
        if args.save_weighted {
            result.weighted.save(&weighted_dir.join(format!("{stem}.png")))?;
        }
    }
    log::info!("colorized {} images into {}", files.len(), args.output.display());
    Ok(())
}
