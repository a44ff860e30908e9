//! Declarative layer lists with shape tracing and parameter counting.
//!
//! Nothing here executes a layer; it only does the extent arithmetic
//! needed to size the bottleneck and compare it with the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape;

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerOp {
    Conv {
        oc: usize,
        k: usize,
        #[serde(default = "one")]
        s: usize,
        #[serde(default)]
        p: usize,
        /// Count a per-channel bias in `param_count`.
        #[serde(default)]
        bias: bool,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm,
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool {
        k: usize,
        #[serde(default = "one")]
        s: usize,
        #[serde(default)]
        p: usize,
    },
    #[serde(rename = "adaptive_avgpool")]
    AdaptiveAvgPool { oh: usize, ow: usize },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub op: LayerOp,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bottleneck: bool,
}

impl From<LayerOp> for LayerSpec {
    fn from(op: LayerOp) -> Self {
        LayerSpec {
            op,
            bottleneck: false,
        }
    }
}

impl LayerSpec {
    pub fn conv(oc: usize, k: usize, s: usize, p: usize) -> Self {
        LayerOp::Conv {
            oc,
            k,
            s,
            p,
            bias: false,
        }
        .into()
    }

    pub fn maxpool(k: usize, s: usize, p: usize) -> Self {
        LayerOp::MaxPool { k, s, p }.into()
    }

    pub fn batchnorm() -> Self {
        LayerOp::BatchNorm.into()
    }

    pub fn relu() -> Self {
        LayerOp::Relu.into()
    }

    pub fn adaptive_avgpool(oh: usize, ow: usize) -> Self {
        LayerOp::AdaptiveAvgPool { oh, ow }.into()
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerOp::Linear {
            in_features,
            out_features,
        }
        .into()
    }

    pub fn softmax() -> Self {
        LayerOp::Softmax.into()
    }

    pub fn as_bottleneck(mut self) -> Self {
        self.bottleneck = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            name: name.into(),
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let flagged = self.layers.iter().filter(|l| l.bottleneck).count();
        if flagged > 1 {
            return Err(Error::Shape(format!(
                "network {} flags {flagged} bottleneck layers, at most one allowed",
                self.name
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let bad = match l.op {
                LayerOp::Conv { oc, k, s, .. } => oc == 0 || k == 0 || s == 0,
                LayerOp::MaxPool { k, s, .. } => k == 0 || s == 0,
                LayerOp::AdaptiveAvgPool { oh, ow } => oh == 0 || ow == 0,
                LayerOp::Linear {
                    in_features,
                    out_features,
                } => in_features == 0 || out_features == 0,
                _ => false,
            };
            if bad {
                return Err(Error::Shape(format!(
                    "layer {i} of {} has a zero hyperparameter: {:?}",
                    self.name, l.op
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeTrace {
    pub input: Shape,
    /// Output shape of each layer, in order.
    pub shapes: Vec<Shape>,
    pub bottleneck: Option<Shape>,
    pub params: u64,
}

impl ShapeTrace {
    /// Shape after the last layer (the input for an empty network).
    pub fn output(&self) -> &Shape {
        self.shapes.last().unwrap_or(&self.input)
    }
}

fn chw(in_shape: &Shape, what: &str) -> Result<(usize, usize, usize)> {
    match *in_shape.dims() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!(
            "{what} needs a [C, H, W] input, got {in_shape}"
        ))),
    }
}

fn window_extent(len: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    let padded = len + 2 * p;
    if padded < k {
        return Err(Error::Shape(format!(
            "kernel {k} exceeds padded extent {padded} ({len} + 2*{p})"
        )));
    }
    Ok((padded - k) / s + 1)
}

pub fn output_shape(layer: &LayerSpec, in_shape: &Shape) -> Result<Shape> {
    match layer.op {
        LayerOp::Conv { oc, k, s, p, .. } => {
            let (_, h, w) = chw(in_shape, "conv")?;
            Shape::new(vec![
                oc,
                window_extent(h, k, s, p)?,
                window_extent(w, k, s, p)?,
            ])
        }
        LayerOp::MaxPool { k, s, p } => {
            let (c, h, w) = chw(in_shape, "maxpool")?;
            Shape::new(vec![
                c,
                window_extent(h, k, s, p)?,
                window_extent(w, k, s, p)?,
            ])
        }
        LayerOp::AdaptiveAvgPool { oh, ow } => {
            let (c, _, _) = chw(in_shape, "adaptive_avgpool")?;
            Shape::new(vec![c, oh, ow])
        }
        LayerOp::Linear {
            in_features,
            out_features,
        } => {
            if in_shape.numel() != in_features {
                return Err(Error::Shape(format!(
                    "linear expects {in_features} features, input {in_shape} has {}",
                    in_shape.numel()
                )));
            }
            Shape::new(vec![out_features])
        }
        LayerOp::BatchNorm | LayerOp::Relu | LayerOp::Softmax => Ok(in_shape.clone()),
    }
}

fn layer_params(layer: &LayerSpec, in_shape: &Shape) -> u64 {
    let c = in_shape.dims()[0] as u64;
    match layer.op {
        LayerOp::Conv { oc, k, bias, .. } => {
            let oc = oc as u64;
            let k = k as u64;
            c * oc * k * k + if bias { oc } else { 0 }
        }
        LayerOp::BatchNorm => 2 * c,
        LayerOp::Linear {
            in_features,
            out_features,
        } => (in_features * out_features + out_features) as u64,
        _ => 0,
    }
}

pub fn trace(net: &NetworkSpec, in_shape: &Shape) -> Result<ShapeTrace> {
    net.validate()?;
    let mut shapes = Vec::with_capacity(net.layers.len());
    let mut bottleneck = None;
    let mut params = 0u64;
    let mut cur = in_shape.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        let next = output_shape(layer, &cur).map_err(|e| match e {
            Error::Shape(msg) => Error::Shape(format!("{} layer {i}: {msg}", net.name)),
            other => other,
        })?;
        params += layer_params(layer, &cur);
        if layer.bottleneck {
            bottleneck = Some(next.clone());
        }
        shapes.push(next.clone());
        cur = next;
    }
    Ok(ShapeTrace {
        input: in_shape.clone(),
        shapes,
        bottleneck,
        params,
    })
}

pub fn param_count(net: &NetworkSpec, in_shape: &Shape) -> Result<u64> {
    Ok(trace(net, in_shape)?.params)
}

/// Elements in the bottleneck per element of the input.
pub fn tensor_ratio(bottleneck: &Shape, input: &Shape) -> f64 {
    bottleneck.numel() as f64 / input.numel() as f64
}

/// Parses `CxHxW` (or any `x`-separated extent list).
pub fn parse_shape(s: &str) -> Result<Shape> {
    let dims = s
        .split(['x', 'X', ','])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Argument(format!("bad extent {p:?} in shape {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Shape::new(dims).map_err(|e| Error::Argument(e.to_string()))
}

/// Built-in layer lists for the detector backbone pieces.
pub mod fixtures {
    use super::*;

    pub const NAMES: [&str; 4] = ["resnet_stem", "teacher_l1", "student_l1", "neural_filter"];

    /// ResNet L0: 7x7/2 conv, batchnorm, ReLU, 3x3/2 max pool.
    pub fn stem_layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(64, 7, 2, 3),
            LayerSpec::batchnorm(),
            LayerSpec::relu(),
            LayerSpec::maxpool(3, 2, 1),
        ]
    }

    /// Teacher L1 as listed layer by layer (three residual bottleneck
    /// blocks; the downsample projection appears inline).
    pub fn teacher_l1_layers() -> Vec<LayerSpec> {
        use LayerSpec as L;
        vec![
            L::conv(64, 1, 1, 0),
            L::batchnorm(),
            L::conv(64, 3, 1, 1),
            L::batchnorm(),
            L::conv(256, 1, 1, 0),
            L::batchnorm(),
            L::conv(256, 1, 1, 0),
            L::batchnorm(),
            L::relu(),
            L::conv(64, 1, 1, 0),
            L::batchnorm(),
            L::conv(64, 3, 1, 1),
            L::batchnorm(),
            L::conv(256, 1, 1, 0),
            L::batchnorm(),
            L::relu(),
            L::conv(64, 1, 1, 0),
            L::batchnorm(),
            L::conv(64, 3, 1, 1),
            L::batchnorm(),
            L::conv(256, 1, 1, 0),
            L::batchnorm(),
            L::relu(),
        ]
    }

    /// Student L1: the 3-channel conv is the bottleneck; the layers after it
    /// restore the teacher's [256, H, W] output.
    pub fn student_l1_layers() -> Vec<LayerSpec> {
        use LayerSpec as L;
        vec![
            L::conv(64, 2, 1, 1),
            L::batchnorm(),
            L::conv(256, 2, 1, 1),
            L::batchnorm(),
            L::relu(),
            L::conv(64, 2, 1, 1),
            L::batchnorm(),
            L::conv(3, 2, 1, 1).as_bottleneck(),
            L::batchnorm(),
            L::relu(),
            L::conv(64, 2, 1, 0),
            L::batchnorm(),
            L::conv(128, 2, 1, 0),
            L::batchnorm(),
            L::relu(),
            L::conv(256, 2, 1, 0),
            L::batchnorm(),
            L::conv(256, 2, 1, 0),
            L::batchnorm(),
            L::relu(),
        ]
    }

    /// Empty-image classifier fed by the L0 output.
    pub fn neural_filter_layers() -> Vec<LayerSpec> {
        use LayerSpec as L;
        vec![
            L::adaptive_avgpool(64, 64),
            L::conv(64, 4, 2, 0),
            L::batchnorm(),
            L::relu(),
            L::conv(32, 3, 2, 0),
            L::batchnorm(),
            L::relu(),
            L::conv(16, 2, 1, 0),
            L::batchnorm(),
            L::relu(),
            L::adaptive_avgpool(8, 8),
            L::linear(1024, 2),
            L::softmax(),
        ]
    }

    fn with_stem(name: &str, tail: Vec<LayerSpec>) -> NetworkSpec {
        let mut layers = stem_layers();
        layers.extend(tail);
        NetworkSpec::new(name, layers)
    }

    /// Named fixture. Everything except `resnet_stem` is prefixed with the
    /// stem so it traces directly from an image shape.
    pub fn fixture(name: &str) -> Option<NetworkSpec> {
        Some(match name {
            "resnet_stem" => NetworkSpec::new(name, stem_layers()),
            "teacher_l1" => with_stem(name, teacher_l1_layers()),
            "student_l1" => with_stem(name, student_l1_layers()),
            "neural_filter" => with_stem(name, neural_filter_layers()),
            _ => return None,
        })
    }
}
