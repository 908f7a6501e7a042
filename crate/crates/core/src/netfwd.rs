//! Small feedforward inference engine: dense, ReLU, 2-D convolution and
//! flatten layers read from a human-writable text format.
//!
//! ```text
//! # comment
//! layer conv2d <in_ch> <out_ch> <k> <stride> <pad>
//! <out_ch·in_ch·k·k weights, (out, in, ky, kx) order> <out_ch biases>
//! layer relu
//! layer flatten
//! layer dense <in> <out>
//! <out·in weights, row-major out × in> <out biases>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::geometry::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("truncated weight file: {0}")]
    Truncated(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown layer tag `{0}`")]
    UnknownLayer(String),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        /// Row-major `outputs × inputs`.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        /// `(out_ch, in_ch, kernel, kernel)` order.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Flatten,
}

impl Layer {
    fn param_count(&self) -> usize {
        match self {
            Layer::Dense { inputs, outputs, .. } => outputs * inputs + outputs,
            Layer::Conv2d {
                in_ch, out_ch, kernel, ..
            } => out_ch * in_ch * kernel * kernel + out_ch,
            Layer::Relu | Layer::Flatten => 0,
        }
    }
}

/// Dense tensor, either `[n]` or `[c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_image(image: &GrayImage) -> Self {
        Self {
            shape: vec![image.channels(), image.height(), image.width()],
            data: image.to_chw(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub layers: Vec<Layer>,
}

fn header(tokens: &[&str], line_no: usize) -> std::result::Result<Layer, WeightsError> {
    let dims = |n: usize| -> std::result::Result<Vec<usize>, WeightsError> {
        if tokens.len() != n + 1 {
            return Err(WeightsError::Parse(format!(
                "line {line_no}: `{}` expects {n} shape values",
                tokens[0]
            )));
        }
        tokens[1..]
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| WeightsError::Parse(format!("line {line_no}: bad shape value {t:?}")))
            })
            .collect()
    };
    match tokens[0] {
        "dense" => {
            let d = dims(2)?;
            if d[0] == 0 || d[1] == 0 {
                return Err(WeightsError::ShapeMismatch(format!("line {line_no}: empty dense layer")));
            }
            Ok(Layer::Dense {
                inputs: d[0],
                outputs: d[1],
                weights: Vec::new(),
                bias: Vec::new(),
            })
        }
        "relu" => dims(0).map(|_| Layer::Relu),
        "flatten" => dims(0).map(|_| Layer::Flatten),
        "conv2d" => {
            let d = dims(5)?;
            if d[0] == 0 || d[1] == 0 || d[2] == 0 || d[3] == 0 {
                return Err(WeightsError::ShapeMismatch(format!("line {line_no}: empty conv2d layer")));
            }
            Ok(Layer::Conv2d {
                in_ch: d[0],
                out_ch: d[1],
                kernel: d[2],
                stride: d[3],
                pad: d[4],
                weights: Vec::new(),
                bias: Vec::new(),
            })
        }
        other => Err(WeightsError::UnknownLayer(other.to_string())),
    }
}

fn fill(layer: &mut Layer, values: Vec<f64>, index: usize) -> std::result::Result<(), WeightsError> {
    let expected = layer.param_count();
    if values.len() != expected {
        return Err(WeightsError::ShapeMismatch(format!(
            "layer {index} expects {expected} values, found {}",
            values.len()
        )));
    }
    match layer {
        Layer::Dense {
            inputs,
            outputs,
            weights,
            bias,
        } => {
            *weights = values[..*inputs * *outputs].to_vec();
            *bias = values[*inputs * *outputs..].to_vec();
        }
        Layer::Conv2d {
            in_ch,
            out_ch,
            kernel,
            weights,
            bias,
            ..
        } => {
            let n = *out_ch * *in_ch * *kernel * *kernel;
            *weights = values[..n].to_vec();
            *bias = values[n..].to_vec();
        }
        Layer::Relu | Layer::Flatten => {}
    }
    Ok(())
}

impl NetSpec {
    pub fn parse(text: &str) -> std::result::Result<Self, WeightsError> {
        let mut layers: Vec<Layer> = Vec::new();
        let mut pending: Option<(Layer, Vec<f64>)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens[0] == "layer" {
                if tokens.len() < 2 {
                    return Err(WeightsError::Parse(format!("line {}: missing layer tag", i + 1)));
                }
                if let Some((mut layer, values)) = pending.take() {
                    fill(&mut layer, values, layers.len())?;
                    layers.push(layer);
                }
                pending = Some((header(&tokens[1..], i + 1)?, Vec::new()));
            } else {
                let (_, values) = pending.as_mut().ok_or_else(|| {
                    WeightsError::Parse(format!("line {}: values before the first layer", i + 1))
                })?;
                for t in tokens {
                    values.push(
                        t.parse::<f64>()
                            .map_err(|_| WeightsError::Parse(format!("line {}: bad number {t:?}", i + 1)))?,
                    );
                }
            }
        }
        match pending.take() {
            Some((mut layer, values)) => {
                fill(&mut layer, values, layers.len())?;
                layers.push(layer);
            }
            None => return Err(WeightsError::Truncated("no layers".into())),
        }
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    /// Checks adjacent shapes where they are known without an input.
    pub fn validate(&self) -> std::result::Result<(), WeightsError> {
        let mut flat: Option<usize> = None;
        let mut channels: Option<usize> = None;
        let mut vector = false;
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { inputs, outputs, .. } => {
                    if let Some(f) = flat {
                        if f != *inputs {
                            return Err(WeightsError::ShapeMismatch(format!(
                                "layer {i}: dense expects {inputs} inputs, previous layer gives {f}"
                            )));
                        }
                    }
                    flat = Some(*outputs);
                    channels = None;
                    vector = true;
                    logits = Some(*outputs);
                }
                Layer::Conv2d { in_ch, out_ch, .. } => {
                    if vector {
                        return Err(WeightsError::ShapeMismatch(format!(
                            "layer {i}: conv2d after a flat layer"
                        )));
                    }
                    if let Some(c) = channels {
                        if c != *in_ch {
                            return Err(WeightsError::ShapeMismatch(format!(
                                "layer {i}: conv2d expects {in_ch} channels, previous layer gives {c}"
                            )));
                        }
                    }
                    channels = Some(*out_ch);
                    flat = None;
                    logits = None;
                }
                Layer::Flatten => vector = true,
                Layer::Relu => {}
            }
        }
        match logits {
            Some(k) if k >= 2 => Ok(()),
            Some(k) => Err(WeightsError::ShapeMismatch(format!("network outputs {k} logit(s), need at least 2"))),
            None => Err(WeightsError::ShapeMismatch("network must end with a dense layer".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let write_values = |out: &mut String, values: &[f64]| {
            let line: Vec<String> = values.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        };
        for layer in &self.layers {
            match layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    let _ = writeln!(out, "layer dense {inputs} {outputs}");
                    for row in weights.chunks(*inputs) {
                        write_values(&mut out, row);
                    }
                    write_values(&mut out, bias);
                }
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                    weights,
                    bias,
                } => {
                    let _ = writeln!(out, "layer conv2d {in_ch} {out_ch} {kernel} {stride} {pad}");
                    for row in weights.chunks(kernel * kernel) {
                        write_values(&mut out, row);
                    }
                    write_values(&mut out, bias);
                }
                Layer::Relu => out.push_str("layer relu\n"),
                Layer::Flatten => out.push_str("layer flatten\n"),
            }
        }
        out
    }

    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = apply(layer, x).map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
        }
        Ok(x.data)
    }

    pub fn forward_batch(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.forward(x)).collect()
    }

    pub fn forward_image(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.forward(&Tensor::from_image(image))
    }
}

fn apply(layer: &Layer, x: Tensor) -> std::result::Result<Tensor, String> {
    match layer {
        Layer::Dense {
            inputs,
            outputs,
            weights,
            bias,
        } => {
            if x.data.len() != *inputs {
                return Err(format!("dense expects {inputs} values, got {}", x.data.len()));
            }
            let y = weights
                .chunks(*inputs)
                .zip(bias)
                .map(|(row, b)| row.iter().zip(&x.data).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            debug_assert_eq!(bias.len(), *outputs);
            Ok(Tensor::vector(y))
        }
        Layer::Relu => Ok(Tensor {
            shape: x.shape,
            data: x.data.into_iter().map(|v| v.max(0.0)).collect(),
        }),
        Layer::Flatten => Ok(Tensor::vector(x.data)),
        Layer::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weights,
            bias,
        } => {
            let &[c, h, w] = x.shape.as_slice() else {
                return Err(format!("conv2d expects a [c, h, w] input, got {:?}", x.shape));
            };
            if c != *in_ch {
                return Err(format!("conv2d expects {in_ch} channels, got {c}"));
            }
            let (k, s, p) = (*kernel, *stride, *pad);
            if h + 2 * p < k || w + 2 * p < k {
                return Err(format!("kernel {k} larger than padded input {h}x{w}"));
            }
            let oh = (h + 2 * p - k) / s + 1;
            let ow = (w + 2 * p - k) / s + 1;
            let mut out = vec![0.0; out_ch * oh * ow];
            for o in 0..*out_ch {
                for r in 0..oh {
                    for q in 0..ow {
                        let mut acc = bias[o];
                        for i in 0..c {
                            for ky in 0..k {
                                let y = (r * s + ky) as i64 - p as i64;
                                if y < 0 || y >= h as i64 {
                                    continue;
                                }
                                for kx in 0..k {
                                    let xx = (q * s + kx) as i64 - p as i64;
                                    if xx < 0 || xx >= w as i64 {
                                        continue;
                                    }
                                    let wt = weights[((o * c + i) * k + ky) * k + kx];
                                    acc += wt * x.data[(i * h + y as usize) * w + xx as usize];
                                }
                            }
                        }
                        out[(o * oh + r) * ow + q] = acc;
                    }
                }
            }
            Ok(Tensor {
                shape: vec![*out_ch, oh, ow],
                data: out,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
# dense(4,2) + relu + dense(2,2)
layer dense 4 2
1 0 0 0
0 1 0 0
0 0
layer relu
layer dense 2 2
1 0
0 1
0 0
";

    #[test]
    fn parses_three_layers() {
        let net = NetSpec::parse(SMALL).unwrap();
        assert_eq!(net.layers.len(), 3);
        assert_eq!(net.forward(&Tensor::vector(vec![-1.0, 2.0, 5.0, 5.0])).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn wrong_weight_count() {
        let text = "layer dense 4 2\n1 2 3 4 5 6 7\nlayer dense 2 2\n1 0 0 1 0 0\n";
        assert!(matches!(NetSpec::parse(text), Err(WeightsError::ShapeMismatch(_))));
    }

    #[test]
    fn empty_file_is_truncated() {
        assert!(matches!(NetSpec::parse(""), Err(WeightsError::Truncated(_))));
        assert!(matches!(NetSpec::parse("# nothing\n"), Err(WeightsError::Truncated(_))));
    }

    #[test]
    fn unknown_tag_and_chain_mismatch() {
        assert!(matches!(
            NetSpec::parse("layer softmax\n"),
            Err(WeightsError::UnknownLayer(t)) if t == "softmax"
        ));
        let text = "layer dense 2 3\n0 0 0 0 0 0 0 0 0\nlayer dense 2 2\n0 0 0 0 0 0\n";
        assert!(matches!(NetSpec::parse(text), Err(WeightsError::ShapeMismatch(_))));
        let one_logit = "layer dense 2 1\n1 1 0\n";
        assert!(matches!(NetSpec::parse(one_logit), Err(WeightsError::ShapeMismatch(_))));
    }

    #[test]
    fn identity_dense() {
        let net = NetSpec {
            layers: vec![Layer::Dense {
                inputs: 3,
                outputs: 3,
                weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                bias: vec![0.0; 3],
            }],
        };
        let x = vec![0.3, -1.2, 4.0];
        assert_eq!(net.forward(&Tensor::vector(x.clone())).unwrap(), x);
    }

    #[test]
    fn relu_clamps() {
        assert_eq!(apply(&Layer::Relu, Tensor::vector(vec![-1.0, 2.0])).unwrap().data, vec![0.0, 2.0]);
    }

    #[test]
    fn pointwise_conv_doubles() {
        let conv = Layer::Conv2d {
            in_ch: 1,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            pad: 0,
            weights: vec![2.0],
            bias: vec![0.0],
        };
        let img = GrayImage::from_fn(3, 3, 1, |_, _, _| 0.5).unwrap();
        let out = apply(&conv, Tensor::from_image(&img)).unwrap();
        assert_eq!(out.shape, vec![1, 3, 3]);
        assert!(out.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn padded_strided_conv() {
        // 3x3 box filter, pad 1, stride 2 over a 4x4 ones image.
        let conv = Layer::Conv2d {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 2,
            pad: 1,
            weights: vec![1.0; 9],
            bias: vec![0.5],
        };
        let x = Tensor {
            shape: vec![1, 4, 4],
            data: vec![1.0; 16],
        };
        let out = apply(&conv, x).unwrap();
        assert_eq!(out.shape, vec![1, 2, 2]);
        assert_eq!(out.data, vec![4.5, 6.5, 6.5, 9.5]);
    }

    #[test]
    fn input_shape_mismatch() {
        let net = NetSpec::parse(SMALL).unwrap();
        assert!(matches!(net.forward(&Tensor::vector(vec![1.0; 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn text_round_trip() {
        let net = NetSpec::parse(SMALL).unwrap();
        assert_eq!(NetSpec::parse(&net.to_text()).unwrap(), net);
    }
}
