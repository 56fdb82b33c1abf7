use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(format!(
                "unknown activation {other:?} (expected tanh, relu or identity)"
            )),
        }
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) fn uniform_matrix<R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// Glorot-style limit `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn fan_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `y = act(x W + b)` with `W` stored as `[d_in × d_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(d_in: usize, d_out: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((d_in, d_out)),
            bias: Array1::zeros(d_out),
            activation,
        }
    }

    pub fn init<R: Rng>(d_in: usize, d_out: usize, activation: Activation, rng: &mut R) -> Self {
        DenseLayer {
            weights: uniform_matrix(d_in, d_out, fan_limit(d_in, d_out), rng),
            bias: Array1::zeros(d_out),
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    /// Gradient of `dy · y` given the cached input `x` and output `y`.
    /// Returns the parameter gradient and `d/dx`.
    pub fn backward(
        &self,
        x: ArrayView1<'_, f64>,
        y: ArrayView1<'_, f64>,
        dy: ArrayView1<'_, f64>,
    ) -> (DenseGrad, Array1<f64>) {
        let act = self.activation;
        let dz = ndarray::Zip::from(&dy)
            .and(&y)
            .map_collect(|&g, &out| g * act.derivative_at_output(out));
        let weights = outer(x, dz.view());
        let dx = self.weights.dot(&dz);
        (DenseGrad { weights, bias: dz }, dx)
    }

    pub fn add_scaled(&mut self, grad: &DenseGrad, alpha: f64) {
        self.weights.scaled_add(alpha, &grad.weights);
        self.bias.scaled_add(alpha, &grad.bias);
    }
}

impl DenseGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        DenseGrad {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &DenseGrad) {
        self.weights += &other.weights;
        self.bias += &other.bias;
    }
}

pub(crate) fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Token lookup table `[vocab × d]`; row 0 is the unknown token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vectors: Array2<f64>,
}

impl EmbeddingTable {
    /// Rows drawn from `Uniform(-0.5/d, 0.5/d)`.
    pub fn init<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            vectors: uniform_matrix(vocab, dim, 0.5 / dim as f64, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn row(&self, id: u32) -> ArrayView1<'_, f64> {
        self.vectors.row(id as usize)
    }

    /// Element-wise mean of the rows for `ids`; zero vector when empty.
    pub fn mean(&self, ids: &[u32]) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim());
        if ids.is_empty() {
            return acc;
        }
        for &id in ids {
            acc += &self.row(id);
        }
        acc / ids.len() as f64
    }

    pub fn add_scaled(&mut self, grad: &SparseRows, alpha: f64) {
        for (id, g) in &grad.rows {
            self.vectors.row_mut(*id as usize).scaled_add(alpha, g);
        }
    }
}

/// Gradient for a lookup table: only touched rows are stored. A row may
/// appear more than once; entries add.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub rows: Vec<(u32, Array1<f64>)>,
}

impl SparseRows {
    pub fn push(&mut self, id: u32, g: Array1<f64>) {
        self.rows.push((id, g));
    }

    pub fn extend(&mut self, other: &SparseRows) {
        self.rows.extend(other.rows.iter().cloned());
    }

    pub fn to_dense(&self, vocab: usize, dim: usize) -> Array2<f64> {
        let mut out = Array2::zeros((vocab, dim));
        for (id, g) in &self.rows {
            let mut row = out.row_mut(*id as usize);
            row += g;
        }
        out
    }
}

/// Vanilla tanh recurrence `h_t = tanh(x_t W_in + h_{t-1} W_rec + b)`,
/// starting from the zero state.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnEncoder {
    pub input_weights: Array2<f64>,
    pub recurrent_weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnGrad {
    pub input_weights: Array2<f64>,
    pub recurrent_weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl RnnEncoder {
    pub fn init<R: Rng>(d_in: usize, d_hidden: usize, rng: &mut R) -> Self {
        RnnEncoder {
            input_weights: uniform_matrix(d_in, d_hidden, fan_limit(d_in, d_hidden), rng),
            recurrent_weights: uniform_matrix(d_hidden, d_hidden, fan_limit(d_hidden, d_hidden), rng),
            bias: Array1::zeros(d_hidden),
        }
    }

    pub fn d_in(&self) -> usize {
        self.input_weights.nrows()
    }

    pub fn d_hidden(&self) -> usize {
        self.recurrent_weights.nrows()
    }

    /// Hidden state after every step.
    pub fn forward(&self, inputs: &[ArrayView1<'_, f64>]) -> Vec<Array1<f64>> {
        let mut states: Vec<Array1<f64>> = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut a = x.dot(&self.input_weights);
            if let Some(prev) = states.last() {
                a += &prev.dot(&self.recurrent_weights);
            }
            a += &self.bias;
            a.mapv_inplace(f64::tanh);
            states.push(a);
        }
        states
    }

    /// Backpropagation through time from a gradient on the last state.
    /// Returns the parameter gradient and the gradient for each input.
    pub fn backward(
        &self,
        inputs: &[ArrayView1<'_, f64>],
        states: &[Array1<f64>],
        d_last: ArrayView1<'_, f64>,
    ) -> (RnnGrad, Vec<Array1<f64>>) {
        let mut grad = RnnGrad::zeros_like(self);
        let mut dx = vec![Array1::zeros(self.d_in()); inputs.len()];
        let mut dh = d_last.to_owned();
        for t in (0..inputs.len()).rev() {
            let da = ndarray::Zip::from(&dh)
                .and(&states[t])
                .map_collect(|&g, &h| g * (1.0 - h * h));
            grad.input_weights += &outer(inputs[t], da.view());
            grad.bias += &da;
            dx[t] = self.input_weights.dot(&da);
            if t > 0 {
                grad.recurrent_weights += &outer(states[t - 1].view(), da.view());
                dh = self.recurrent_weights.dot(&da);
            }
        }
        (grad, dx)
    }

    pub fn add_scaled(&mut self, grad: &RnnGrad, alpha: f64) {
        self.input_weights.scaled_add(alpha, &grad.input_weights);
        self.recurrent_weights.scaled_add(alpha, &grad.recurrent_weights);
        self.bias.scaled_add(alpha, &grad.bias);
    }
}

impl RnnGrad {
    pub fn zeros_like(rnn: &RnnEncoder) -> Self {
        RnnGrad {
            input_weights: Array2::zeros(rnn.input_weights.raw_dim()),
            recurrent_weights: Array2::zeros(rnn.recurrent_weights.raw_dim()),
            bias: Array1::zeros(rnn.bias.raw_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &RnnGrad) {
        self.input_weights += &other.input_weights;
        self.recurrent_weights += &other.recurrent_weights;
        self.bias += &other.bias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_pooling() {
        let t = EmbeddingTable {
            vectors: array![[0.0, 0.0], [1.0, 2.0], [3.0, 6.0]],
        };
        assert_eq!(t.mean(&[1]), array![1.0, 2.0]);
        assert_eq!(t.mean(&[1, 2]), array![2.0, 4.0]);
        assert_eq!(t.mean(&[1, 2, 1, 2]), t.mean(&[2, 1]));
        assert_eq!(t.mean(&[]), array![0.0, 0.0]);
    }

    #[test]
    fn single_step_rnn() {
        let rnn = RnnEncoder {
            input_weights: array![[0.5, -1.0], [2.0, 0.25]],
            recurrent_weights: array![[9.0, 9.0], [9.0, 9.0]],
            bias: array![0.1, -0.2],
        };
        let x = array![1.0, -1.0];
        let states = rnn.forward(&[x.view()]);
        let expect = (x.dot(&rnn.input_weights) + &rnn.bias).mapv(f64::tanh);
        assert_eq!(states[0], expect);
    }

    #[test]
    fn dense_backward_zero_upstream() {
        let mut rng = crate::seed::rng_from(3);
        let layer = DenseLayer::init(3, 2, Activation::Tanh, &mut rng);
        let x = array![0.1, 0.2, -0.3];
        let y = layer.forward(x.view());
        let (g, dx) = layer.backward(x.view(), y.view(), Array1::zeros(2).view());
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }
}
