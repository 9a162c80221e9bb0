//! Gradient-weighted class activation maps.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::net::{ConvNet, Mode};
use super::{NetError, Tensor};
use crate::raster::{resample_plane, ResampleKernel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamTarget {
    Sex,
    Age,
}

impl std::str::FromStr for CamTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sex" => Ok(CamTarget::Sex),
            "age" => Ok(CamTarget::Age),
            other => Err(format!("unknown target '{other}' (sex|age)")),
        }
    }
}

/// Values in `[0, 1]`, row-major, at the input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.values[best] { i } else { best });
        (i % self.width, i / self.width)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Grad-CAM of one `3 x H x W` image in eval mode, on the last conv block's
/// rectified (pre-pool) activations.
///
/// For the sex target the score is the logit of the predicted class
/// (`+z` when predicted female, `-z` otherwise), so the map explains the
/// decision actually taken.
pub fn gradcam<T: Scalar>(net: &ConvNet<T>, image: &Tensor<T>, target: CamTarget) -> Result<Heatmap, NetError> {
    let (n, _, h, w) = image.dims4()?;
    if n != 1 {
        return Err(NetError::ShapeMismatch { expected: vec![1, 3, h, w], got: image.shape().to_vec() });
    }
    let task = net.task();
    let index = match target {
        CamTarget::Sex => task.sex_index(),
        CamTarget::Age => task.age_index(),
    }
    .ok_or_else(|| NetError::InvalidConfig(format!("network task {task} has no {target:?} output")))?;

    let mut net = net.clone();
    let feats = net.backbone_forward(image, Mode::Eval)?;
    let out = net.head_forward(&feats, Mode::Eval)?;
    let mut dout = Tensor::zeros(vec![1, task.outputs()]);
    let sign = match target {
        CamTarget::Sex if sigmoid(out.data()[index]) < T::lit(0.5) => -T::one(),
        _ => T::one(),
    };
    dout.data_mut()[index] = sign;
    let dfeat = net.head_backward(&dout);
    let Some((a, da, (_, c, ah, aw))) = net.last_block_gradient(&dfeat) else {
        return Err(NetError::InvalidArchitecture("Grad-CAM needs at least one conv block".into()));
    };

    let s = ah * aw;
    let mut cam = vec![0.0f64; s];
    for ch in 0..c {
        let alpha = da[ch * s..(ch + 1) * s].iter().map(|v| v.to_f64_lossy()).sum::<f64>() / s as f64;
        if alpha == 0.0 {
            continue;
        }
        for (m, v) in cam.iter_mut().zip(&a[ch * s..(ch + 1) * s]) {
            *m += alpha * v.to_f64_lossy();
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut up = resample_plane(&cam, aw, ah, w, h, ResampleKernel::Bilinear);
    let (lo, hi) = up.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    if hi <= 0.0 {
        up.iter_mut().for_each(|v| *v = 0.0);
    } else if hi - lo <= hi * 1e-12 {
        up.iter_mut().for_each(|v| *v = 1.0);
    } else {
        up.iter_mut().for_each(|v| *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0));
    }
    Ok(Heatmap { width: w, height: h, values: up })
}

fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [(1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0), (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0), (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0)]
}

/// Colour-mapped heatmap blended at 0.5 over a grayscale rendering of the
/// input (`gray` in `[0, 1]`, same size as the heatmap).
pub fn heatmap_overlay(gray: &[f64], heat: &Heatmap) -> RgbImage {
    let mut img = RgbImage::new(heat.width as u32, heat.height as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        let g = gray.get(i).copied().unwrap_or(1.0);
        let c = colormap(heat.values[i]);
        for k in 0..3 {
            px.0[k] = ((0.5 * g + 0.5 * c[k]).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img
}

pub fn save_overlay_png(gray: &[f64], heat: &Heatmap, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    heatmap_overlay(gray, heat)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::Error::io(path.display().to_string(), std::io::Error::other(e)))
}
