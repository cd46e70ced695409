use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Layer layout of a [`Classifier`](super::Classifier).
///
/// Every conv stage is a 3x3 kernel, stride 2, zero padding 1, followed by a
/// ReLU; each hidden dense layer is followed by a ReLU; the last dense layer
/// produces `classes` logits. With no conv stages and no hidden layers the
/// model is a plain linear classifier. Inputs are shifted by `input_mean`
/// before the first layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub input_mean: f64,
}

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv {
        in_h: usize,
        in_w: usize,
        in_c: usize,
        out_h: usize,
        out_w: usize,
        out_c: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    pub(crate) fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv { in_c, out_c, .. } => vec![out_c, KERNEL, KERNEL, in_c],
            LayerKind::Dense { inputs, outputs } => vec![outputs, inputs],
        }
    }

    pub(crate) fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Conv { out_c, .. } => out_c,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv { in_c, .. } => KERNEL * KERNEL * in_c,
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }

    #[cfg(test)]
    pub(crate) fn output_len(&self) -> usize {
        match *self {
            LayerKind::Conv {
                out_h, out_w, out_c, ..
            } => out_h * out_w * out_c,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }
}

fn conv_out(extent: usize) -> usize {
    (extent + 2 * PAD - KERNEL) / STRIDE + 1
}

impl ArchSpec {
    /// Two conv stages (8, 16 channels), one hidden layer of 64 units; pixels
    /// in `[0, 1]` are centered at 0.5.
    pub fn reference(height: usize, width: usize, channels: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            channels,
            conv_channels: vec![8, 16],
            hidden: vec![64],
            classes,
            input_mean: 0.5,
        }
    }

    pub fn linear(height: usize, width: usize, channels: usize, classes: usize) -> Self {
        Self {
            height,
            width,
            channels,
            conv_channels: vec![],
            hidden: vec![],
            classes,
            input_mean: 0.0,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.height > 0 && self.width > 0 && self.channels > 0, || {
            format!("input extents must be positive: {:?}", self.input_shape())
        })?;
        ensure(self.classes >= 2, || {
            format!("need at least 2 classes, got {}", self.classes)
        })?;
        ensure(
            self.conv_channels.iter().chain(&self.hidden).all(|&c| c > 0),
            || "layer widths must be positive".into(),
        )?;
        ensure(self.input_mean.is_finite(), || "input_mean must be finite".into())?;
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<LayerKind> {
        let mut out = Vec::new();
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        for &oc in &self.conv_channels {
            let (oh, ow) = (conv_out(h), conv_out(w));
            out.push(LayerKind::Conv {
                in_h: h,
                in_w: w,
                in_c: c,
                out_h: oh,
                out_w: ow,
                out_c: oc,
            });
            (h, w, c) = (oh, ow, oc);
        }
        let mut width = h * w * c;
        for &units in &self.hidden {
            out.push(LayerKind::Dense {
                inputs: width,
                outputs: units,
            });
            width = units;
        }
        out.push(LayerKind::Dense {
            inputs: width,
            outputs: self.classes,
        });
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight_shape().iter().product::<usize>() + l.bias_len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layout_on_16px() {
        let a = ArchSpec::reference(16, 16, 3, 6);
        let layers = a.layers();
        assert_eq!(layers.len(), 4);
        assert_eq!(layers[0].output_len(), 8 * 8 * 8);
        assert_eq!(layers[1].output_len(), 4 * 4 * 16);
        assert_eq!(
            layers[2],
            LayerKind::Dense {
                inputs: 256,
                outputs: 64
            }
        );
        assert_eq!(a.parameter_count(), 224 + 1168 + 16448 + 390);
    }

    #[test]
    fn odd_extents_round_up() {
        let a = ArchSpec::reference(5, 7, 1, 2);
        match a.layers()[0] {
            LayerKind::Conv { out_h, out_w, .. } => assert_eq!((out_h, out_w), (3, 4)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn validation() {
        assert!(ArchSpec::linear(1, 1, 1, 2).validate().is_ok());
        assert!(ArchSpec::linear(0, 1, 1, 2).validate().is_err());
        assert!(ArchSpec::linear(2, 2, 1, 1).validate().is_err());
    }
}
