use ndarray::{Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One affine layer followed by an activation.
///
/// `weight` is stored `in x out` so a row batch multiplies on the left:
/// `y = act(x · W + b)`. `bias` is a single `1 x out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.ncols()
    }
}

/// Parameters of a multilayer perceptron. Hidden layers use the rectifier,
/// the output layer is linear. The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub layers: Vec<Dense>,
}

/// Tape handles for the weight and bias of every layer.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<(Var, Var)>);

impl DenseParams {
    /// Fan-in scaled uniform initialization: every weight and bias is drawn
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.in_width() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            layer.weight.mapv_inplace(|_| dist.sample(rng));
            layer.bias.mapv_inplace(|_| dist.sample(rng));
        }
        Ok(params)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput("an MLP needs at least input and output widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidInput(format!("zero layer width in {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array2::zeros((1, w[1])),
                activation: if i + 1 == n { Activation::Identity } else { Activation::Relu },
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds from explicit layers, checking that their shapes compose.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.nrows() != 1 || l.bias.ncols() != l.out_width() {
                return Err(Error::Shape(format!("layer {i}: bias shape {:?}", l.bias.dim())));
            }
            if i > 0 && layers[i - 1].out_width() != l.in_width() {
                return Err(Error::Shape(format!(
                    "layer {i}: input width {} does not match previous output {}",
                    l.in_width(),
                    layers[i - 1].out_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array2::zeros(l.bias.raw_dim()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Dense::out_width));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_width)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Weight and bias matrices in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Applies `f(self_entry, other_entry)` to every parameter pair.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("parameter sets differ in shape".into()));
        }
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.zip_mut_with(b, |x, &y| f(x, y));
        }
        Ok(())
    }

    /// Batched forward pass; each row of `x` is one input.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                x.ncols(),
                self.input_width()
            )));
        }
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = h.dot(&layer.weight);
            h += &layer.bias;
            if layer.activation == Activation::Relu {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Single-input forward pass without batching overhead.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                x.len(),
                self.input_width()
            )));
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut out: Vec<f64> = layer.bias.row(0).to_vec();
            for (xi, wrow) in h.iter().zip(layer.weight.rows()) {
                for (o, w) in out.iter_mut().zip(wrow.iter()) {
                    *o += xi * w;
                }
            }
            if layer.activation == Activation::Relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`, returning the output node and the
    /// parameter leaves needed to read gradients back.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<(Var, ParamVars)> {
        if tape.value(x).ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                tape.value(x).ncols(),
                self.input_width()
            )));
        }
        let mut vars = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if layer.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
            vars.push((w, b));
        }
        Ok((h, ParamVars(vars)))
    }

    /// Gathers gradients for parameters recorded by [`DenseParams::record`].
    pub fn collect_grads(&self, grads: &mut Gradients, vars: &ParamVars) -> Self {
        let layers = self
            .layers
            .iter()
            .zip(&vars.0)
            .map(|(l, &(w, b))| Dense {
                weight: grads.take(w),
                bias: grads.take(b),
                activation: l.activation,
            })
            .collect();
        Self { layers }
    }

    /// Sums gradients from several recordings of the same network.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.zip_apply(other, |a, b| *a += b)
    }

    pub fn batch_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged input rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::Shape(e.to_string()))
    }
}

/// Concatenates two row batches side by side.
pub fn hstack(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = DenseParams::zeros(&[3, 5, 2]).unwrap();
        let y = net.forward(array![[1.0, -2.0, 7.0]].view()).unwrap();
        assert_eq!(y, array![[0.0, 0.0]]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            weight: Array2::eye(2),
            bias: Array2::zeros((1, 2)),
            activation: Activation::Identity,
        };
        let net = DenseParams::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward_one(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_two_three_one_network() {
        // Hidden: W1 (2x3), b1; output: W2 (3x1), b2.
        let net = DenseParams::from_layers(vec![
            Dense {
                weight: array![[1.0, -1.0, 0.5], [2.0, 1.0, -1.0]],
                bias: array![[0.5, 0.0, -0.25]],
                activation: Activation::Relu,
            },
            Dense {
                weight: array![[1.0], [2.0], [-3.0]],
                bias: array![[0.1]],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        // x = (1, -1): pre-activations = (1-2+0.5, -1-1+0, 0.5+1-0.25) = (-0.5, -2, 1.25)
        // relu -> (0, 0, 1.25); output = -3 * 1.25 + 0.1 = -3.65
        let y = net.forward_one(&[1.0, -1.0]).unwrap();
        assert!((y[0] - -3.65).abs() < 1e-12);
        let yb = net.forward(array![[1.0, -1.0]].view()).unwrap();
        assert!((yb[[0, 0]] - -3.65).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = DenseParams::zeros(&[2, 4, 1]).unwrap();
        assert!(matches!(net.forward_one(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(net.forward(Array2::zeros((3, 3)).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_composing_layers() {
        let a = Dense { weight: Array2::zeros((2, 3)), bias: Array2::zeros((1, 3)), activation: Activation::Relu };
        let b = Dense { weight: Array2::zeros((4, 1)), bias: Array2::zeros((1, 1)), activation: Activation::Identity };
        assert!(DenseParams::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic_and_bounded() {
        let a = DenseParams::new(&[2, 64, 64, 4], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = DenseParams::new(&[2, 64, 64, 4], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / 64f64.sqrt();
        assert!(a.layers[1].weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseParams::new(&[4, 16, 16, 3], &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let yb = net.forward(x.view()).unwrap();
        for r in 0..2 {
            let y = net.forward_one(x.row(r).as_slice().unwrap()).unwrap();
            for c in 0..3 {
                assert!((y[c] - yb[[r, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recorded_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseParams::new(&[2, 8, 3], &mut rng).unwrap();
        let x = array![[0.3, 0.9], [0.0, 0.5]];
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (y, _) = net.record(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), &net.forward(x.view()).unwrap());
    }
}
