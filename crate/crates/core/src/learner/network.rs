//! Feedforward networks with ReLU hidden units and exact backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng::{stream, Stream};

/// Affine layer `z = W x + b` with `W` stored row-major, `rows × cols`
/// (output width × input width).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn weight_row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.cols..(o + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.rows * self.cols && self.bias.len() == self.rows
    }

    fn forward(&self, x: &[f64], batch: usize, out: &mut [f64]) {
        for b in 0..batch {
            let xr = &x[b * self.cols..(b + 1) * self.cols];
            let zr = &mut out[b * self.rows..(b + 1) * self.rows];
            for (o, z) in zr.iter_mut().enumerate() {
                *z = self.bias[o] + dot(self.weight_row(o), xr);
            }
        }
    }

    /// Accumulates `dz`'s contribution into `grad` and, when requested, the
    /// input gradient into `dx`.
    fn backward(
        &self,
        x: &[f64],
        dz: &[f64],
        batch: usize,
        grad: &mut Dense,
        mut dx: Option<&mut [f64]>,
    ) {
        for b in 0..batch {
            let xr = &x[b * self.cols..(b + 1) * self.cols];
            for o in 0..self.rows {
                let g = dz[b * self.rows + o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                axpy(&mut grad.weights[o * self.cols..(o + 1) * self.cols], g, xr);
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(
                        &mut dx[b * self.cols..(b + 1) * self.cols],
                        g,
                        self.weight_row(o),
                    );
                }
            }
        }
    }
}

fn relu(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose activation was clipped by ReLU.
fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Network topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// `widths = [d_in, h_1, ..., h_L, C]`; ReLU after every hidden layer.
    Mlp { widths: Vec<usize> },
    /// Input rows are `[features | stacked logits]`. The features pass a
    /// ReLU embedding layer of width `embed_dim`; the logits pass a linear
    /// projection to `proj_dim`; a linear classifier reads the concatenation.
    Fusion {
        feature_dim: usize,
        stack_dim: usize,
        embed_dim: usize,
        proj_dim: usize,
        classes: usize,
    },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Mlp { widths } => {
                if widths.len() < 2 {
                    return Err(Error::invalid(
                        "layer_widths",
                        "need at least input and output widths",
                    ));
                }
                if widths.contains(&0) {
                    return Err(Error::invalid(
                        "layer_widths",
                        format!("{widths:?} contains a zero width"),
                    ));
                }
            }
            Architecture::Fusion {
                feature_dim,
                stack_dim,
                embed_dim,
                proj_dim,
                classes,
            } => {
                if [feature_dim, stack_dim, embed_dim, proj_dim, classes].contains(&&0) {
                    return Err(Error::invalid(
                        "fusion dims",
                        "all dimensions must be positive",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `(rows, cols)` of every layer in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            Architecture::Mlp { widths } => widths.windows(2).map(|w| (w[1], w[0])).collect(),
            Architecture::Fusion {
                feature_dim,
                stack_dim,
                embed_dim,
                proj_dim,
                classes,
            } => vec![
                (*embed_dim, *feature_dim),
                (*proj_dim, *stack_dim),
                (*classes, embed_dim + proj_dim),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Mlp { widths } => widths[0],
            Architecture::Fusion {
                feature_dim,
                stack_dim,
                ..
            } => feature_dim + stack_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Mlp { widths } => *widths.last().expect("validated"),
            Architecture::Fusion { classes, .. } => *classes,
        }
    }
}

/// A network's topology together with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct Network {
    architecture: Architecture,
    layers: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    architecture: Architecture,
    layers: Vec<Dense>,
}

impl TryFrom<NetworkRepr> for Network {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        Network::from_layers(r.architecture, r.layers)
    }
}

impl From<Network> for NetworkRepr {
    fn from(n: Network) -> Self {
        NetworkRepr {
            architecture: n.architecture,
            layers: n.layers,
        }
    }
}

/// Per-layer gradients, shaped like [`Network::layers`].
pub type Gradients = Vec<Dense>;

impl Network {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let layers = architecture
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let weights = (0..rows * cols)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Dense {
                    rows,
                    cols,
                    weights,
                    bias: vec![0.0; rows],
                }
            })
            .collect();
        Ok(Network {
            architecture,
            layers,
        })
    }

    pub fn from_layers(architecture: Architecture, layers: Vec<Dense>) -> Result<Self> {
        architecture.validate()?;
        let shapes = architecture.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::dims("layer count", shapes.len(), layers.len()));
        }
        for (l, ((rows, cols), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.rows != *rows || layer.cols != *cols || !layer.is_consistent() {
                return Err(Error::invalid(
                    "layers",
                    format!(
                        "layer {l} is {}x{}, expected {rows}x{cols}",
                        layer.rows, layer.cols
                    ),
                ));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::invalid(
                    "layers",
                    format!("layer {l} has non-finite parameters"),
                ));
            }
        }
        Ok(Network {
            architecture,
            layers,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.architecture.output_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.rows, l.cols))
            .collect()
    }

    /// Logits for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&m)?.into_vec())
    }

    /// Logits for every row of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.run(x).logits)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    fn run(&self, x: &Matrix) -> Trace {
        let batch = x.rows();
        match &self.architecture {
            Architecture::Mlp { .. } => {
                let mut acts = vec![x.as_slice().to_vec()];
                let last = self.layers.len() - 1;
                for (l, layer) in self.layers.iter().enumerate() {
                    let mut z = vec![0.0; batch * layer.rows];
                    layer.forward(&acts[l], batch, &mut z);
                    if l < last {
                        relu(&mut z);
                    }
                    acts.push(z);
                }
                let out = acts.pop().expect("at least one layer");
                Trace {
                    logits: Matrix::from_vec(batch, self.output_dim(), out).expect("shape"),
                    acts,
                }
            }
            Architecture::Fusion {
                feature_dim,
                stack_dim,
                ..
            } => {
                let xf = x.column_block(0, *feature_dim).into_vec();
                let xs = x.column_block(*feature_dim, *stack_dim).into_vec();
                let [embed, proj, head] = &self.layers[..] else {
                    unreachable!("fusion networks have three layers")
                };
                let mut e = vec![0.0; batch * embed.rows];
                embed.forward(&xf, batch, &mut e);
                relu(&mut e);
                let mut q = vec![0.0; batch * proj.rows];
                proj.forward(&xs, batch, &mut q);
                let mut h = Vec::with_capacity(batch * head.cols);
                for b in 0..batch {
                    h.extend_from_slice(&e[b * embed.rows..(b + 1) * embed.rows]);
                    h.extend_from_slice(&q[b * proj.rows..(b + 1) * proj.rows]);
                }
                let mut out = vec![0.0; batch * head.rows];
                head.forward(&h, batch, &mut out);
                Trace {
                    logits: Matrix::from_vec(batch, head.rows, out).expect("shape"),
                    acts: vec![xf, xs, e, h],
                }
            }
        }
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        if x.rows() == 0 {
            return Err(Error::invalid("batch", "must be non-empty"));
        }
        if labels.len() != x.rows() {
            return Err(Error::dims("batch labels", x.rows(), labels.len()));
        }
        let classes = self.output_dim();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(
                "label",
                format!("{bad} is outside 0..{classes}"),
            ));
        }
        let batch = x.rows();
        let trace = self.run(x);
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut dz = trace.logits.into_vec();
        for (b, &y) in labels.iter().enumerate() {
            let row = &mut dz[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            loss += max + sum.ln() - row[y];
            for (c, z) in row.iter_mut().enumerate() {
                let p = (*z - max).exp() / sum;
                *z = (p - if c == y { 1.0 } else { 0.0 }) * scale;
            }
        }
        loss *= scale;

        let mut grads = self.zero_gradients();
        match &self.architecture {
            Architecture::Mlp { .. } => {
                let acts = trace.acts;
                for l in (0..self.layers.len()).rev() {
                    let layer = &self.layers[l];
                    if l == 0 {
                        layer.backward(&acts[0], &dz, batch, &mut grads[0], None);
                    } else {
                        let mut dx = vec![0.0; batch * layer.cols];
                        layer.backward(&acts[l], &dz, batch, &mut grads[l], Some(&mut dx));
                        relu_mask(&mut dx, &acts[l]);
                        dz = dx;
                    }
                }
            }
            Architecture::Fusion { .. } => {
                let [xf, xs, e, h] = &trace.acts[..] else {
                    unreachable!("fusion trace has four buffers")
                };
                let (embed, proj, head) = (&self.layers[0], &self.layers[1], &self.layers[2]);
                let mut dh = vec![0.0; batch * head.cols];
                head.backward(h, &dz, batch, &mut grads[2], Some(&mut dh));
                let mut de = Vec::with_capacity(batch * embed.rows);
                let mut dq = Vec::with_capacity(batch * proj.rows);
                for b in 0..batch {
                    let row = &dh[b * head.cols..(b + 1) * head.cols];
                    de.extend_from_slice(&row[..embed.rows]);
                    dq.extend_from_slice(&row[embed.rows..]);
                }
                relu_mask(&mut de, e);
                embed.backward(xf, &de, batch, &mut grads[0], None);
                proj.backward(xs, &dq, batch, &mut grads[1], None);
            }
        }
        Ok((loss, grads))
    }
}

struct Trace {
    logits: Matrix,
    /// Mlp: the input and every hidden activation. Fusion: feature input,
    /// stack input, embedding activation, concatenated head input.
    acts: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_for_deep_meta_net() {
        let net = Network::init(
            Architecture::Mlp {
                widths: vec![20, 512, 512, 4],
            },
            1,
        )
        .unwrap();
        let shapes: Vec<(usize, usize, usize)> = net
            .layers()
            .iter()
            .map(|l| (l.rows, l.cols, l.bias.len()))
            .collect();
        assert_eq!(shapes, [(512, 20, 512), (512, 512, 512), (4, 512, 4)]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = Architecture::Mlp {
            widths: vec![4, 512, 4],
        };
        let a = Network::init(arch.clone(), 1).unwrap();
        let b = Network::init(arch.clone(), 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, Network::init(arch, 1).unwrap());
        let limit = (6.0f64 / 516.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let arch = Architecture::Mlp {
            widths: vec![3, 5, 4],
        };
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| Dense::zeros(r, c))
            .collect();
        let net = Network::from_layers(arch, layers).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn identity_layer() {
        let arch = Architecture::Mlp { widths: vec![4, 4] };
        let mut layer = Dense::zeros(4, 4);
        for i in 0..4 {
            layer.weights[i * 4 + i] = 1.0;
        }
        let net = Network::from_layers(arch, vec![layer]).unwrap();
        assert_eq!(
            net.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn input_width_is_checked() {
        let net = Network::init(Architecture::Mlp { widths: vec![3, 4] }, 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let arch = Architecture::Mlp { widths: vec![2, 4] };
        let net = Network::from_layers(arch, vec![Dense::zeros(4, 2)]).unwrap();
        let x = Matrix::from_rows(2, &[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let (loss, _) = net.loss_and_grad(&x, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(net.loss_and_grad(&x, &[0, 4]).is_err());
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let arch = Architecture::Mlp { widths: vec![1, 2] };
        for margin in [10.0, 100.0, 1000.0] {
            let layer = Dense {
                rows: 2,
                cols: 1,
                weights: vec![margin, 0.0],
                bias: vec![0.0, 0.0],
            };
            let net = Network::from_layers(arch.clone(), vec![layer]).unwrap();
            let x = Matrix::from_rows(1, &[vec![1.0]]).unwrap();
            let (loss, _) = net.loss_and_grad(&x, &[0]).unwrap();
            assert!(loss >= 0.0 && loss < 1e-4, "margin {margin}: {loss}");
        }
    }

    #[test]
    fn fusion_shapes() {
        let arch = Architecture::Fusion {
            feature_dim: 32,
            stack_dim: 20,
            embed_dim: 1024,
            proj_dim: 512,
            classes: 4,
        };
        let shapes = arch.layer_shapes();
        assert_eq!(shapes[2], (4, 1536));
        let net = Network::init(arch, 3).unwrap();
        let x = Matrix::zeros(2, 52);
        assert_eq!(net.forward_batch(&x).unwrap().cols(), 4);
    }
}
