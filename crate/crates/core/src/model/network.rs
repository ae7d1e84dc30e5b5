use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Tensor;
use crate::numerics::{dot, Matrix};

/// A convolutional layer in the reshaped matrix form: `weights` is
/// d x (k*k*c + 1) with one filter per row and the bias as the last column.
/// A response at one spatial position is `W x` where `x` reshapes the
/// k x k x c input volume with a trailing 1 for the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub k: usize,
    pub c: usize,
    pub d: usize,
    pub stride: usize,
    pub weights: Matrix,
}

impl ConvLayer {
    pub fn new(k: usize, c: usize, d: usize, stride: usize, weights: Matrix) -> Result<Self> {
        if k == 0 || c == 0 || d == 0 {
            return Err(Error::Validation("conv: k, c, d must be positive".into()));
        }
        if stride == 0 {
            return Err(Error::Validation("conv: stride must be >= 1".into()));
        }
        let want_cols = k * k * c + 1;
        if weights.rows() != d || weights.cols() != want_cols {
            return Err(Error::Dimension(format!(
                "conv: weights are {}x{}, expected {d}x{want_cols}",
                weights.rows(),
                weights.cols()
            )));
        }
        Ok(Self {
            k,
            c,
            d,
            stride,
            weights,
        })
    }

    /// Flat index into the reshaped input volume for offset (dh, dw, ch).
    #[inline]
    pub fn patch_index(&self, dh: usize, dw: usize, ch: usize) -> usize {
        (dh * self.k + dw) * self.c + ch
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.k || w < self.k {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than {k}x{k} filter",
                k = self.k
            )));
        }
        Ok(((h - self.k) / self.stride + 1, (w - self.k) / self.stride + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    MaxPool { size: usize, stride: usize },
    Flatten,
    /// Dense layer; `weights` is out x (in + 1) with the bias last.
    FullyConnected { weights: Matrix },
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "max_pool",
            Layer::Flatten => "flatten",
            Layer::FullyConnected { .. } => "fully_connected",
            Layer::Softmax => "softmax",
        }
    }

    pub fn as_conv(&self) -> Option<&ConvLayer> {
        match self {
            Layer::Conv(c) => Some(c),
            _ => None,
        }
    }
}

/// Shape of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeState {
    Spatial(usize, usize, usize),
    Flat(usize),
}

/// An ordered feed-forward network. Shape consistency is checked once at
/// construction; forward passes may then assume layers compose.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<Layer>,
    pub name: String,
    pub seed: u64,
}

impl Network {
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<Layer>,
        name: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
            name: name.into(),
            seed,
        };
        net.shape_walk()?;
        for (i, layer) in net.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != net.layers.len() {
                return Err(Error::Validation(format!(
                    "softmax at layer {i} must be the final layer"
                )));
            }
        }
        if net
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Softmax))
            .count()
            > 1
        {
            return Err(Error::Validation("more than one softmax layer".into()));
        }
        Ok(net)
    }

    /// Shape after every layer; index i is the output shape of layer i.
    pub fn shape_walk(&self) -> Result<Vec<ShapeState>> {
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape("input shape has a zero dimension".into()));
        }
        let mut state = ShapeState::Spatial(h, w, c);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            state = layer_out_shape(layer, state).map_err(|e| e.at_layer(i))?;
            out.push(state);
        }
        Ok(out)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_recording(input, &[])?.0)
    }

    /// Forward pass recording the outputs of the requested layer indices.
    pub fn forward_recording(
        &self,
        input: &Tensor,
        record: &[usize],
    ) -> Result<(Tensor, BTreeMap<usize, Tensor>)> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut recorded = BTreeMap::new();
        for (i, layer) in self.layers.iter().enumerate() {
            x = apply_layer(layer, &x).map_err(|e| e.at_layer(i))?;
            if record.contains(&i) {
                recorded.insert(i, x.clone());
            }
        }
        Ok((x, recorded))
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if input.shape() != [h, w, c] {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match network input {:?}",
                input.shape(),
                [h, w, c]
            )));
        }
        Ok(())
    }

    /// Indices of all convolutional layers, in order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_conv().map(|_| i))
            .collect()
    }

    /// Replace the conv layer at `layer_idx` by the decomposed pair: first a
    /// conv with `d_prime` filters of the original spatial size (weights
    /// `w_prime`, whose last column carries the original bias folded through
    /// Q^T), then a 1x1 conv with `d` filters given by `p` and bias `b`,
    /// restoring the original output dimension.
    pub fn replace_conv(
        &self,
        layer_idx: usize,
        w_prime: &Matrix,
        p: &Matrix,
        b: &[f64],
    ) -> Result<Network> {
        let conv = self
            .layers
            .get(layer_idx)
            .and_then(Layer::as_conv)
            .ok_or_else(|| {
                Error::Validation(format!("layer {layer_idx} is not a convolutional layer"))
            })?;
        let d = conv.d;
        let d_prime = p.cols();
        if d_prime == 0 || d_prime > d {
            return Err(Error::Validation(format!(
                "replacement rank {d_prime} outside [1, {d}]"
            )));
        }
        if p.rows() != d {
            return Err(Error::Dimension(format!(
                "P is {}x{}, expected {d}x{d_prime}",
                p.rows(),
                p.cols()
            )));
        }
        if w_prime.rows() != d_prime || w_prime.cols() != conv.weights.cols() {
            return Err(Error::Dimension(format!(
                "W' is {}x{}, expected {d_prime}x{}",
                w_prime.rows(),
                w_prime.cols(),
                conv.weights.cols()
            )));
        }
        if b.len() != d {
            return Err(Error::Dimension(format!(
                "bias length {} does not match d = {d}",
                b.len()
            )));
        }

        let first = ConvLayer::new(conv.k, conv.c, d_prime, conv.stride, w_prime.clone())?;
        let restore_weights = Matrix::from_fn(d, d_prime + 1, |r, c| {
            if c < d_prime {
                p[(r, c)]
            } else {
                b[r]
            }
        });
        let second = ConvLayer::new(1, d_prime, d, 1, restore_weights)?;

        let mut layers = Vec::with_capacity(self.layers.len() + 1);
        layers.extend_from_slice(&self.layers[..layer_idx]);
        layers.push(Layer::Conv(first));
        layers.push(Layer::Conv(second));
        layers.extend_from_slice(&self.layers[layer_idx + 1..]);
        Network::new(self.input_shape, layers, self.name.clone(), self.seed)
    }
}

fn layer_out_shape(layer: &Layer, state: ShapeState) -> Result<ShapeState> {
    match (layer, state) {
        (Layer::Conv(conv), ShapeState::Spatial(h, w, c)) => {
            if c != conv.c {
                return Err(Error::Shape(format!(
                    "conv expects {} input channels, got {c}",
                    conv.c
                )));
            }
            let (oh, ow) = conv.out_spatial(h, w)?;
            Ok(ShapeState::Spatial(oh, ow, conv.d))
        }
        (Layer::Conv(_), ShapeState::Flat(_)) => {
            Err(Error::Shape("conv applied to flattened input".into()))
        }
        (Layer::Relu, s) => Ok(s),
        (Layer::MaxPool { size, stride }, ShapeState::Spatial(h, w, c)) => {
            if *size == 0 || *stride == 0 {
                return Err(Error::Shape("max_pool size/stride must be >= 1".into()));
            }
            if h < *size || w < *size {
                return Err(Error::Shape(format!(
                    "input {h}x{w} smaller than {size}x{size} pool"
                )));
            }
            Ok(ShapeState::Spatial(
                (h - size) / stride + 1,
                (w - size) / stride + 1,
                c,
            ))
        }
        (Layer::MaxPool { .. }, ShapeState::Flat(_)) => {
            Err(Error::Shape("max_pool applied to flattened input".into()))
        }
        (Layer::Flatten, ShapeState::Spatial(h, w, c)) => Ok(ShapeState::Flat(h * w * c)),
        (Layer::Flatten, ShapeState::Flat(_)) => {
            Err(Error::Shape("flatten applied twice".into()))
        }
        (Layer::FullyConnected { weights }, ShapeState::Flat(n)) => {
            if weights.cols() != n + 1 {
                return Err(Error::Shape(format!(
                    "fully connected expects {} inputs, got {n}",
                    weights.cols() - 1
                )));
            }
            Ok(ShapeState::Flat(weights.rows()))
        }
        (Layer::FullyConnected { .. }, ShapeState::Spatial(..)) => Err(Error::Shape(
            "fully connected applied to spatial input (flatten first)".into(),
        )),
        (Layer::Softmax, ShapeState::Flat(n)) => Ok(ShapeState::Flat(n)),
        (Layer::Softmax, ShapeState::Spatial(..)) => {
            Err(Error::Shape("softmax applied to spatial input".into()))
        }
    }
}

/// Convolution of one layer over a rank-3 input, valid padding only.
/// Every output position equals `W x` for the reshaped input volume.
pub fn conv_forward(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.dims3()?;
    if c != layer.c {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {c}",
            layer.c
        )));
    }
    let (oh, ow) = layer.out_spatial(h, w)?;
    let k = layer.k;
    let stride = layer.stride;
    let xlen = k * k * c;
    let mut out = Tensor::zeros(vec![oh, ow, layer.d]);
    let mut patch = vec![0.0; xlen];
    for r in 0..oh {
        for s in 0..ow {
            for dh in 0..k {
                for dw in 0..k {
                    for ch in 0..c {
                        patch[layer.patch_index(dh, dw, ch)] =
                            input.at3(r * stride + dh, s * stride + dw, ch);
                    }
                }
            }
            for f in 0..layer.d {
                let row = layer.weights.row(f);
                out.set3(r, s, f, dot(&row[..xlen], &patch) + row[xlen]);
            }
        }
    }
    Ok(out)
}

pub fn apply_layer(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    match layer {
        Layer::Conv(conv) => conv_forward(conv, x),
        Layer::Relu => {
            let data = x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        }
        Layer::MaxPool { size, stride } => {
            let (h, w, c) = x.dims3()?;
            if h < *size || w < *size {
                return Err(Error::Shape(format!(
                    "input {h}x{w} smaller than {size}x{size} pool"
                )));
            }
            let oh = (h - size) / stride + 1;
            let ow = (w - size) / stride + 1;
            let mut out = Tensor::zeros(vec![oh, ow, c]);
            for r in 0..oh {
                for s in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        for dh in 0..*size {
                            for dw in 0..*size {
                                let v = x.at3(r * stride + dh, s * stride + dw, ch);
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        out.set3(r, s, ch, best);
                    }
                }
            }
            Ok(out)
        }
        Layer::Flatten => Tensor::new(vec![x.len()], x.data().to_vec()),
        Layer::FullyConnected { weights } => {
            if x.shape().len() != 1 || x.len() + 1 != weights.cols() {
                return Err(Error::Shape(format!(
                    "fully connected expects {} inputs, got shape {:?}",
                    weights.cols() - 1,
                    x.shape()
                )));
            }
            let out: Vec<f64> = (0..weights.rows())
                .map(|r| {
                    let row = weights.row(r);
                    dot(&row[..x.len()], x.data()) + row[x.len()]
                })
                .collect();
            Tensor::new(vec![weights.rows()], out)
        }
        Layer::Softmax => {
            if x.shape().len() != 1 {
                return Err(Error::Shape("softmax expects a flat vector".into()));
            }
            Ok(softmax(x))
        }
    }
}

pub fn softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(vec![x.len()], exps.iter().map(|e| e / sum).collect()).expect("softmax shape")
}
