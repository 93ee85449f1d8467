use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A 3×H×W image with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConstants {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationConstants {
    /// Per-channel statistics of the breast ultrasound images.
    pub const PAPER: NormalizationConstants =
        NormalizationConstants { mean: [0.2394, 0.2421, 0.2381], std: [0.2173, 0.2177, 0.2155] };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().all(|&s| s > 0.0 && s.is_finite()) && self.mean.iter().all(|m| m.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("normalization std must be positive and finite: {self:?}")))
        }
    }
}

impl Default for NormalizationConstants {
    fn default() -> Self {
        Self::PAPER
    }
}

/// Decodes a BMP or PNG file to a 3×H×W tensor with values in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = ::image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Bilinear resampling with pixel centers at half-integers (not corner-aligned).
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape(format!("resize expects C×H×W, got {:?}", image.shape())));
    };
    if h < 2 || w < 2 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("cannot resize {h}×{w} to {out_h}×{out_w}")));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = (src.floor() as usize).min(n_in - 2);
                (i0, i0 + 1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Per-channel `(x − mean) / std`.
pub fn normalize(image: &Tensor, constants: &NormalizationConstants) -> Result<Tensor> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape(format!("normalize expects 3×H×W, got {:?}", image.shape())));
    };
    let plane = h * w;
    Ok(Tensor::from_fn(image.shape(), |i| {
        let c = i / plane;
        (image.data()[i] - constants.mean[c]) / constants.std[c]
    }))
}

/// How [`Dataset::open`] treats files that fail to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Log a warning and continue.
    Bulk,
    /// Fail on the first bad file.
    Strict,
}

/// In-memory labeled images plus the class names indexed by label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub images: Vec<LabeledImage>,
}

fn is_image_file(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "bmp" | "png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

impl Dataset {
    /// Reads `<root>/<class>/*.{bmp,png}`; class indices follow the sorted
    /// directory names. Images whose extent differs from `size` are resized.
    pub fn open(root: &Path, size: usize, mode: LoadMode) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!("dataset directory {} does not exist", root.display())));
        }
        let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
        if class_dirs.is_empty() {
            return Err(Error::Data(format!("no class directories under {}", root.display())));
        }
        let mut class_names = Vec::new();
        let mut images = Vec::new();
        for (label, dir) in class_dirs.iter().enumerate() {
            class_names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            for file in sorted_entries(dir)?.into_iter().filter(|p| is_image_file(p)) {
                let pixels = match load_image(&file) {
                    Ok(p) => p,
                    Err(e) if mode == LoadMode::Bulk => {
                        log::warn!("skipping {}: {e}", file.display());
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let pixels = match pixels.shape() {
                    [_, h, w] if *h == size && *w == size => pixels,
                    _ => resize_bilinear(&pixels, size, size)?,
                };
                let source = file.strip_prefix(root).unwrap_or(&file).to_string_lossy().into_owned();
                images.push(LabeledImage { pixels, label, source });
            }
        }
        if images.is_empty() {
            return Err(Error::Data(format!("no readable images under {}", root.display())));
        }
        Ok(Dataset { class_names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    /// Normalizes every image in place.
    pub fn normalize(&mut self, constants: &NormalizationConstants) -> Result<()> {
        for img in &mut self.images {
            img.pixels = normalize(&img.pixels, constants)?;
        }
        Ok(())
    }

    /// Stacks the selected images into an N×3×H×W tensor with their labels.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let first = indices.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let per = self.images.get(*first).ok_or_else(|| Error::invalid("batch index out of range"))?.pixels.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * per.iter().product::<usize>());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self.images.get(i).ok_or_else(|| Error::invalid(format!("batch index {i} out of range")))?;
            if img.pixels.shape() != per.as_slice() {
                return Err(Error::shape(format!("mixed image shapes {:?} and {:?}", per, img.pixels.shape())));
            }
            data.extend(img.pixels.data().iter().map(|&x| T::of(x)));
            labels.push(img.label);
        }
        let shape = [indices.len(), per[0], per[1], per[2]];
        Ok((Tensor::new(&shape, data)?, labels))
    }
}
