//! Small dense feedforward networks with backpropagation, shared by the
//! mimic regressor and the MLP classifier.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("model file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiplies `grad` by the derivative, given the activated output `a`.
    fn backprop(self, a: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => grad.zip_mut_with(a, |g, &a| *g *= 1.0 - a * a),
            Activation::Relu => grad.zip_mut_with(a, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// Mean over all output elements of the squared error.
    MeanSquared,
    /// Binary cross-entropy on a single logit output, averaged over rows.
    LogisticCrossEntropy,
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Loss {
    /// Loss value and its gradient with respect to the network output.
    fn evaluate(self, out: &Array2<f64>, target: &ArrayView2<f64>) -> (f64, Array2<f64>) {
        match self {
            Loss::MeanSquared => {
                let n = out.len() as f64;
                let diff = out - target;
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
                (loss, diff * (2.0 / n))
            }
            Loss::LogisticCrossEntropy => {
                let rows = out.nrows() as f64;
                let mut loss = 0.0;
                let mut grad = Array2::zeros(out.raw_dim());
                for ((g, &z), &y) in grad.iter_mut().zip(out.iter()).zip(target.iter()) {
                    loss += log1p_exp(z) - y * z;
                    *g = (sigmoid(z) - y) / rows;
                }
                (loss / rows, grad)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `inputs × outputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense>,
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Network {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// from input to output; the last layer is linear.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Network {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weights = Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound));
                Dense {
                    weights,
                    bias: Array1::zeros(w[1]),
                    activation: if i + 2 == sizes.len() {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        Network { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights) + &layer.bias;
            layer.activation.apply(&mut z);
            a = z;
        }
        a
    }

    /// Loss (plus `0.5 · l2 · Σ w²` over weight matrices) and its gradient.
    pub fn gradients(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        loss: Loss,
        l2: f64,
    ) -> (f64, Gradients) {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let mut z = activations.last().expect("input").dot(&layer.weights) + &layer.bias;
            layer.activation.apply(&mut z);
            activations.push(z);
        }
        let (mut value, mut delta) = loss.evaluate(activations.last().expect("output"), &target);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&activations[i + 1], &mut delta);
            let mut gw = activations[i].t().dot(&delta);
            if l2 > 0.0 {
                gw.scaled_add(l2, &layer.weights);
                value += 0.5 * l2 * layer.weights.iter().map(|w| w * w).sum::<f64>();
            }
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights.t());
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (value, Gradients { layers: grads })
    }

    pub fn loss(&self, x: ArrayView2<f64>, target: ArrayView2<f64>, loss: Loss, l2: f64) -> f64 {
        let out = self.forward(x);
        let mut value = loss.evaluate(&out, &target).0;
        if l2 > 0.0 {
            for layer in &self.layers {
                value += 0.5 * l2 * layer.weights.iter().map(|w| w * w).sum::<f64>();
            }
        }
        value
    }

    /// Every parameter in a fixed order: per layer, weights row-major then bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let w = layer.weights.len();
            if index < w {
                return layer.weights.iter_mut().nth(index).expect("in range");
            }
            index -= w;
            let b = layer.bias.len();
            if index < b {
                return &mut layer.bias[index];
            }
            index -= b;
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.is_finite())
    }

    /// Text form: `network <layers>`, then per layer a `layer <in> <out>
    /// <activation>` line, `in` weight rows and one bias row.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "network {}", self.layers.len())?;
        for layer in &self.layers {
            let (i, o) = layer.weights.dim();
            writeln!(out, "layer {i} {o} {}", layer.activation.as_str())?;
            for row in layer.weights.outer_iter() {
                write_row(&mut out, row.iter())?;
            }
            write_row(&mut out, layer.bias.iter())?;
        }
        Ok(())
    }

    pub fn read_text<I>(lines: &mut I) -> Result<Network, ModelFormatError>
    where
        I: Iterator<Item = std::io::Result<String>>,
    {
        let mut next = || -> Result<String, ModelFormatError> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| ModelFormatError::Parse("unexpected end of file".into()))
        };
        let header = next()?;
        let count: usize = header
            .strip_prefix("network ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| ModelFormatError::Parse(format!("bad network header {header:?}")))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = next()?;
            let fields: Vec<&str> = spec.split_whitespace().collect();
            let (inputs, outputs, activation) = match fields[..] {
                ["layer", i, o, a] => (
                    i.parse::<usize>().ok(),
                    o.parse::<usize>().ok(),
                    Activation::parse(a),
                ),
                _ => (None, None, None),
            };
            let (Some(inputs), Some(outputs), Some(activation)) = (inputs, outputs, activation) else {
                return Err(ModelFormatError::Parse(format!("bad layer line {spec:?}")));
            };
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..inputs {
                weights.extend(parse_row(&next()?, outputs)?);
            }
            let bias = Array1::from(parse_row(&next()?, outputs)?);
            layers.push(Dense {
                weights: Array2::from_shape_vec((inputs, outputs), weights).expect("sized"),
                bias,
                activation,
            });
        }
        if layers.is_empty() {
            return Err(ModelFormatError::Parse("network without layers".into()));
        }
        Ok(Network { layers })
    }
}

fn write_row<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.write_all(b" ")?;
        }
        write!(out, "{v}")?;
    }
    out.write_all(b"\n")
}

pub(crate) fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>, ModelFormatError> {
    let values = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ModelFormatError::Parse(format!("bad numeric row {line:?}")))?;
    if values.len() != expected {
        return Err(ModelFormatError::Parse(format!(
            "expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

impl Gradients {
    /// Flattened in the order of [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: i32,
        moments: Vec<(Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>)>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        match self {
            Optimizer::Sgd { lr } => {
                for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add(-*lr, gw);
                    layer.bias.scaled_add(-*lr, gb);
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
                step,
                moments,
            } => {
                if moments.is_empty() {
                    *moments = net
                        .layers
                        .iter()
                        .map(|l| {
                            (
                                Array2::zeros(l.weights.raw_dim()),
                                Array1::zeros(l.bias.raw_dim()),
                                Array2::zeros(l.weights.raw_dim()),
                                Array1::zeros(l.bias.raw_dim()),
                            )
                        })
                        .collect();
                }
                *step += 1;
                let (b1, b2, eps) = (*beta1, *beta2, *epsilon);
                let rate = *lr * (1.0 - b2.powi(*step)).sqrt() / (1.0 - b1.powi(*step));
                for ((layer, (gw, gb)), (mw, mb, vw, vb)) in
                    net.layers.iter_mut().zip(&grads.layers).zip(moments.iter_mut())
                {
                    adam_update(layer.weights.iter_mut(), gw.iter(), mw.iter_mut(), vw.iter_mut(), b1, b2, eps, rate);
                    adam_update(layer.bias.iter_mut(), gb.iter(), mb.iter_mut(), vb.iter_mut(), b1, b2, eps, rate);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    b1: f64,
    b2: f64,
    eps: f64,
    rate: f64,
) {
    for (((p, &g), m), v) in params.zip(grads).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= rate * *m / (v.sqrt() + eps);
    }
}

/// One pass over shuffled mini-batches. Returns the row-weighted mean batch
/// loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut Network,
    optimizer: &mut Optimizer,
    x: &Array2<f64>,
    y: &Array2<f64>,
    batch_size: usize,
    loss: Loss,
    l2: f64,
    rng: &mut R,
) -> f64 {
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(batch_size.max(1)) {
        let xb = x.select(Axis(0), batch);
        let yb = y.select(Axis(0), batch);
        let (value, grads) = net.gradients(xb.view(), yb.view(), loss, l2);
        optimizer.step(net, &grads);
        total += value * batch.len() as f64;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
