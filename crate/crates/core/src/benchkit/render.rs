//! Procedural "real" images and the parametric forgery artifacts.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::{SeededRng, Tensor};

/// Image extents `[H, W, D]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for ImageShape {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 3,
        }
    }
}

impl ImageShape {
    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.height >= 4 && self.width >= 4 && self.channels >= 1, || {
            format!("image shape {:?} too small, need at least 4x4x1", self.dims())
        })
    }
}

/// Sensor noise: a shared luminance part plus a weaker per-channel part.
const LUMA_NOISE: f64 = 0.02;
const CHROMA_NOISE: f64 = 0.008;

/// Where the renderer put the face, so artifacts can target it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceLayout {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Renders a base image: smooth colored background, a soft elliptical face
/// with two eyes, and sensor noise. Values lie in `[0, 1]`.
pub fn render_real(shape: ImageShape, seed: u64) -> (Tensor, FaceLayout) {
    let mut rng = SeededRng::new(seed);
    let (h, w, d) = (shape.height, shape.width, shape.channels);
    let (hf, wf) = (h as f64, w as f64);
    let base: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.2, 0.8)).collect();
    let waves: Vec<(f64, f64, f64, Vec<f64>)> = (0..3)
        .map(|_| {
            let fy = rng.uniform_range(-1.5, 1.5);
            let fx = rng.uniform_range(-1.5, 1.5);
            let ph = rng.uniform_range(0.0, 2.0 * PI);
            let amp = (0..d).map(|_| rng.uniform_range(-0.1, 0.1)).collect();
            (fy, fx, ph, amp)
        })
        .collect();
    let face = FaceLayout {
        cy: hf / 2.0 + rng.uniform_range(-1.5, 1.5),
        cx: wf / 2.0 + rng.uniform_range(-1.5, 1.5),
        ry: hf * rng.uniform_range(0.28, 0.38),
        rx: wf * rng.uniform_range(0.22, 0.32),
    };
    let skin: Vec<f64> = [0.75, 0.55, 0.45]
        .iter()
        .cycle()
        .take(d)
        .map(|&m| (m + rng.uniform_range(-0.15, 0.15)).clamp(0.0, 1.0))
        .collect();
    let eye_dark = rng.uniform_range(0.5, 0.8);
    let grain = rng.uniform_range(0.5, 2.0);
    let eye_dy = face.ry * 0.3;
    let eye_dx = face.rx * 0.45;

    let mut data = vec![0.0; shape.len()];
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let r = ((yf - face.cy) / face.ry).powi(2) + ((xf - face.cx) / face.rx).powi(2);
            let m = sigmoid((1.0 - r.sqrt()) * 6.0);
            let mut eye = 0.0;
            for sx in [-1.0, 1.0] {
                let dy = yf - (face.cy - eye_dy);
                let dx = xf - (face.cx + sx * eye_dx);
                eye += (-(dy * dy + dx * dx) / 0.9).exp();
            }
            let luma = grain * LUMA_NOISE * rng.normal();
            for c in 0..d {
                let mut bg = base[c];
                for (fy, fx, ph, amp) in &waves {
                    bg += amp[c] * (2.0 * PI * (fy * yf / hf + fx * xf / wf) + ph).cos();
                }
                let mut v = (1.0 - m) * bg + m * skin[c];
                v *= 1.0 - eye_dark * eye.min(1.0);
                v += luma + grain * CHROMA_NOISE * rng.normal();
                data[(y * w + x) * d + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    (Tensor::new(shape.dims().to_vec(), data).expect("shape matches"), face)
}

/// Parametric artifact families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    /// Additive grating. Params: `[freq_y, freq_x, amplitude]`, frequencies
    /// in cycles per image; the phase is random per image.
    PeriodicPattern,
    /// Pasted face region: inside a face-aligned ellipse the image is
    /// brightened or darkened and carries extra grain of the same scale,
    /// with a hard-ish seam.
    /// Params: `[radius_scale, amplitude, softness]`.
    SeamBlend,
    /// One channel displaced by a sub-pixel offset.
    /// Params: `[channel, shift_y, shift_x, amplitude]`.
    ChannelShift,
    /// Radial pinch around the face center.
    /// Params: `[radius_scale, strength, amplitude]`.
    LocalWarp,
}

impl ArtifactKind {
    pub fn param_count(self) -> usize {
        match self {
            ArtifactKind::PeriodicPattern | ArtifactKind::SeamBlend | ArtifactKind::LocalWarp => 3,
            ArtifactKind::ChannelShift => 4,
        }
    }

    /// Index of the amplitude entry in the parameter vector.
    pub fn amplitude_index(self) -> usize {
        match self {
            ArtifactKind::PeriodicPattern | ArtifactKind::LocalWarp => 2,
            ArtifactKind::SeamBlend => 1,
            ArtifactKind::ChannelShift => 3,
        }
    }
}

fn bilinear(img: &[f64], h: usize, w: usize, d: usize, y: f64, x: f64, c: usize) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| img[(yy * w + xx) * d + c];
    (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1))
}

/// Applies an artifact with the given per-image `strength` (scales the
/// amplitude). Zero amplitude or strength returns the image unchanged.
pub fn apply_artifact(
    kind: ArtifactKind,
    params: &[f64],
    strength: f64,
    image: &Tensor,
    face: &FaceLayout,
    rng: &mut SeededRng,
) -> Tensor {
    let amp = params[kind.amplitude_index()] * strength;
    // Draw the per-image randomness up front so the stream does not depend
    // on the amplitude.
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let tint_sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    if amp == 0.0 {
        return image.clone();
    }
    let (h, w, d) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (hf, wf) = (h as f64, w as f64);
    let src = image.data();
    let mut out = src.to_vec();
    match kind {
        ArtifactKind::PeriodicPattern => {
            let (fy, fx) = (params[0], params[1]);
            for y in 0..h {
                for x in 0..w {
                    let v = amp * (2.0 * PI * (fy * y as f64 / hf + fx * x as f64 / wf) + phase).cos();
                    for c in 0..d {
                        out[(y * w + x) * d + c] += v;
                    }
                }
            }
        }
        ArtifactKind::SeamBlend => {
            let (scale, softness) = (params[0], params[2].max(1e-3));
            let (ry, rx) = (face.ry * scale, face.rx * scale);
            for y in 0..h {
                for x in 0..w {
                    let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
                    let r = (((yf - face.cy) / ry).powi(2) + ((xf - face.cx) / rx).powi(2)).sqrt();
                    let m = sigmoid((1.0 - r) / softness);
                    let grain = amp * rng.normal();
                    for c in 0..d {
                        let i = (y * w + x) * d + c;
                        out[i] = src[i] + m * (tint_sign * amp + grain);
                    }
                }
            }
        }
        ArtifactKind::ChannelShift => {
            let c = (params[0].max(0.0) as usize).min(d - 1);
            let (sy, sx) = (params[1], params[2]);
            let a = amp.min(1.0);
            for y in 0..h {
                for x in 0..w {
                    let moved = bilinear(src, h, w, d, y as f64 - sy, x as f64 - sx, c);
                    let i = (y * w + x) * d + c;
                    out[i] = (1.0 - a) * src[i] + a * moved;
                }
            }
        }
        ArtifactKind::LocalWarp => {
            let (scale, pinch) = (params[0], params[1]);
            let a = amp.min(1.0);
            let rad = face.ry.max(face.rx) * scale;
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - face.cy, x as f64 + 0.5 - face.cx);
                    let r = (dy * dy + dx * dx).sqrt() / rad;
                    let k = if r < 1.0 { 1.0 + pinch * (1.0 - r).powi(2) } else { 1.0 };
                    let (sy, sx) = (face.cy + dy * k - 0.5, face.cx + dx * k - 0.5);
                    for c in 0..d {
                        let i = (y * w + x) * d + c;
                        out[i] = (1.0 - a) * src[i] + a * bilinear(src, h, w, d, sy, sx, c);
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(image.shape().to_vec(), out).expect("same shape")
}
