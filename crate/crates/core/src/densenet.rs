//! Densely connected feed-forward network `f_θ(x; η)` with reverse-mode
//! gradients for the weights and for the context input.
//!
//! Batches are evaluated as matrices. All layer activations live side by
//! side in one `batch × (input_dim + layers·width)` buffer; under dense
//! connectivity layer `ℓ` reads every column to the left of its own block.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::par::*;
use crate::seed::rng_from;
use crate::systems::DataTuple;

/// Rows per gradient chunk. Fixed so that the reduction order, and thus
/// every floating-point sum, is independent of the thread count.
pub const GRAD_CHUNK_ROWS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Each layer sees the input and every earlier hidden output.
    Dense,
    /// Ordinary multilayer perceptron.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub connectivity: Connectivity,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn dense(input_dim: usize, hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim,
            connectivity: Connectivity::Dense,
            activation: Activation::Tanh,
        }
    }

    pub fn plain(input_dim: usize, hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Self {
        Self {
            connectivity: Connectivity::Plain,
            ..Self::dense(input_dim, hidden_layers, hidden_width, output_dim)
        }
    }

    /// Dynamics network: 7 hidden layers of width 25.
    pub fn dynamics(state_len: usize, eta_dim: usize) -> Self {
        Self::dense(state_len + eta_dim, 7, 25, state_len)
    }

    /// Characteristics network: 6 hidden layers of width 15.
    pub fn characteristics(x_len: usize, eta_dim: usize, y_len: usize) -> Self {
        Self::dense(x_len + eta_dim, 6, 15, y_len)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || (self.hidden_layers > 0 && self.hidden_width == 0) {
            return Err(Error::InvalidArgument(format!("degenerate network spec {self:?}")));
        }
        Ok(())
    }

    pub fn total_cols(&self) -> usize {
        self.input_dim + self.hidden_layers * self.hidden_width
    }

    fn block(&self, layer: usize) -> Range<usize> {
        let start = self.input_dim + layer * self.hidden_width;
        start..start + self.hidden_width
    }

    /// Columns of the activation buffer read by hidden layer `layer` (0-based).
    pub fn layer_input(&self, layer: usize) -> Range<usize> {
        match (self.connectivity, layer) {
            (_, 0) => 0..self.input_dim,
            (Connectivity::Dense, l) => 0..self.input_dim + l * self.hidden_width,
            (Connectivity::Plain, l) => self.block(l - 1),
        }
    }

    pub fn output_input(&self) -> Range<usize> {
        match (self.connectivity, self.hidden_layers) {
            (_, 0) => 0..self.input_dim,
            (Connectivity::Dense, _) => 0..self.total_cols(),
            (Connectivity::Plain, l) => self.block(l - 1),
        }
    }

    /// `(rows, cols)` of every weight matrix, hidden layers first.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.hidden_layers)
            .map(|l| (self.hidden_width, self.layer_input(l).len()))
            .chain(std::iter::once((self.output_dim, self.output_input().len())))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    rows: usize,
    cols: usize,
    weight: usize,
    bias: usize,
}

/// Network weights as one flat vector; each layer stores its row-major
/// weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    spec: NetworkSpec,
    params: Vec<f64>,
}

/// Gradients with respect to the weights and to the context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub d_theta: Vec<f64>,
    pub d_eta: Vec<f64>,
}

/// Which gradients a batch pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Weights and inputs.
    Full,
    /// Inputs only; skips the weight-gradient products.
    InputOnly,
}

#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// Mean squared error over rows and output elements.
    pub loss: f64,
    pub d_theta: Option<Vec<f64>>,
    /// Gradient of the loss with respect to every input row.
    pub d_input: Array2<f64>,
}

impl Theta {
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            params: vec![0.0; spec.param_count()],
            spec,
        })
    }

    /// Uniform ±√(6/(fan_in + fan_out)) weights, zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut theta = Self::zeros(spec)?;
        let mut rng = rng_from(seed);
        for off in theta.layout() {
            let limit = (6.0 / (off.rows + off.cols) as f64).sqrt();
            for w in &mut theta.params[off.weight..off.weight + off.rows * off.cols] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(theta)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_len("parameter vector", params.len(), spec.param_count())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn layout(&self) -> Vec<LayerOffsets> {
        let mut offset = 0;
        self.spec
            .weight_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let o = LayerOffsets {
                    rows,
                    cols,
                    weight: offset,
                    bias: offset + rows * cols,
                };
                offset += rows * cols + rows;
                o
            })
            .collect()
    }

    /// Weight matrix and bias of layer `index` (the output layer is last).
    pub fn layer(&self, index: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let o = self.layout()[index];
        view_layer(&self.params, o)
    }

    /// Mutable weight matrix of layer `index`.
    pub fn weight_mut(&mut self, index: usize) -> ArrayViewMut2<'_, f64> {
        let o = self.layout()[index];
        ArrayViewMut2::from_shape((o.rows, o.cols), &mut self.params[o.weight..o.bias])
            .expect("layout")
    }

    pub fn bias_mut(&mut self, index: usize) -> &mut [f64] {
        let o = self.layout()[index];
        &mut self.params[o.bias..o.bias + o.rows]
    }

    fn check_input_cols(&self, cols: usize) -> Result<()> {
        check_len("network input", cols, self.spec.input_dim)
    }

    /// Forward pass over a batch; returns the activation buffer and outputs.
    fn forward_cached(&self, input: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let spec = &self.spec;
        let layout = self.layout();
        let rows = input.nrows();
        let mut act = Array2::<f64>::zeros((rows, spec.total_cols()));
        act.slice_mut(s![.., 0..spec.input_dim]).assign(&input);
        for (l, off) in layout.iter().take(spec.hidden_layers).enumerate() {
            let (w, b) = view_layer(&self.params, *off);
            let z = act.slice(s![.., spec.layer_input(l)]).dot(&w.t()) + b;
            act.slice_mut(s![.., spec.block(l)])
                .assign(&z.mapv(f64::tanh));
        }
        let (w, b) = view_layer(&self.params, layout[spec.hidden_layers]);
        let out = act.slice(s![.., spec.output_input()]).dot(&w.t()) + b;
        (act, out)
    }

    /// Outputs for every row of `input`.
    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input_cols(input.ncols())?;
        Ok(self.forward_cached(input).1)
    }

    /// `f_θ(x; η)` for a single input.
    pub fn forward(&self, x: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        let input = concat_row(x, eta);
        self.check_input_cols(input.len())?;
        let view = ArrayView2::from_shape((1, input.len()), &input).expect("row");
        Ok(self.forward_cached(view).1.into_raw_vec_and_offset().0)
    }

    /// Reverse pass given `∂L/∂output` for each row. Weight gradients are
    /// accumulated into `d_theta` when present.
    fn backward_cached(
        &self,
        act: &Array2<f64>,
        d_out: ArrayView2<'_, f64>,
        mut d_theta: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let spec = &self.spec;
        let layout = self.layout();
        let rows = act.nrows();
        let mut d_act = Array2::<f64>::zeros((rows, spec.total_cols()));

        let out_off = layout[spec.hidden_layers];
        let out_in = spec.output_input();
        if let Some(g) = d_theta.as_deref_mut() {
            accumulate_layer_grad(g, out_off, d_out, act.slice(s![.., out_in.clone()]));
        }
        let (w, _) = view_layer(&self.params, out_off);
        general_mat_mul(1.0, &d_out, &w, 1.0, &mut d_act.slice_mut(s![.., out_in]));

        for l in (0..spec.hidden_layers).rev() {
            let block = spec.block(l);
            let h = act.slice(s![.., block.clone()]);
            let mut dz = d_act.slice(s![.., block]).to_owned();
            dz.zip_mut_with(&h, |d, &h| *d *= 1.0 - h * h);
            let input = spec.layer_input(l);
            if let Some(g) = d_theta.as_deref_mut() {
                accumulate_layer_grad(g, layout[l], dz.view(), act.slice(s![.., input.clone()]));
            }
            let (w, _) = view_layer(&self.params, layout[l]);
            general_mat_mul(1.0, &dz, &w, 1.0, &mut d_act.slice_mut(s![.., input]));
        }
        d_act.slice(s![.., 0..spec.input_dim]).to_owned()
    }

    /// Exact gradients of `⟨upstream, f_θ(x; η)⟩` with respect to θ and η.
    pub fn backward(&self, x: &[f64], eta: &[f64], upstream: &[f64]) -> Result<GradientPair> {
        let input = concat_row(x, eta);
        self.check_input_cols(input.len())?;
        check_len("upstream gradient", upstream.len(), self.spec.output_dim)?;
        let view = ArrayView2::from_shape((1, input.len()), &input).expect("row");
        let (act, _) = self.forward_cached(view);
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row");
        let mut d_theta = vec![0.0; self.len()];
        let d_input = self.backward_cached(&act, up, Some(&mut d_theta));
        Ok(GradientPair {
            d_theta,
            d_eta: d_input.row(0).slice(s![x.len()..]).to_vec(),
        })
    }

    /// Mean squared error of a batch and its gradients.
    ///
    /// Rows are processed in fixed-size chunks (in parallel when enabled)
    /// and reduced in chunk order.
    pub fn batch_gradient(
        &self,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        mode: GradMode,
    ) -> Result<BatchGrad> {
        self.check_input_cols(inputs.ncols())?;
        check_len("target width", targets.ncols(), self.spec.output_dim)?;
        check_len("target rows", targets.nrows(), inputs.nrows())?;
        let rows = inputs.nrows();
        if rows == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let scale = 2.0 / (rows * self.spec.output_dim) as f64;
        let starts: Vec<usize> = (0..rows).step_by(GRAD_CHUNK_ROWS).collect();
        let chunks: Vec<(f64, Option<Vec<f64>>, Array2<f64>)> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + GRAD_CHUNK_ROWS).min(rows);
                let input = inputs.slice(s![start..end, ..]);
                let target = targets.slice(s![start..end, ..]);
                let (act, out) = self.forward_cached(input);
                let diff = out - target;
                let sq: f64 = diff.iter().map(|d| d * d).sum();
                let d_out = diff * scale;
                let mut g = (mode == GradMode::Full).then(|| vec![0.0; self.len()]);
                let d_in = self.backward_cached(&act, d_out.view(), g.as_deref_mut());
                (sq, g, d_in)
            })
            .collect();

        let mut sq_total = 0.0;
        let mut d_theta = (mode == GradMode::Full).then(|| vec![0.0; self.len()]);
        let mut d_input = Array2::<f64>::zeros((rows, self.spec.input_dim));
        for (&start, (sq, g, d_in)) in starts.iter().zip(chunks) {
            sq_total += sq;
            if let (Some(total), Some(g)) = (d_theta.as_mut(), g) {
                total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
            }
            d_input
                .slice_mut(s![start..start + d_in.nrows(), ..])
                .assign(&d_in);
        }
        Ok(BatchGrad {
            loss: sq_total / (rows * self.spec.output_dim) as f64,
            d_theta,
            d_input,
        })
    }
}

fn view_layer(params: &[f64], o: LayerOffsets) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
    let w = ArrayView2::from_shape((o.rows, o.cols), &params[o.weight..o.bias]).expect("layout");
    let b = ArrayView1::from(&params[o.bias..o.bias + o.rows]);
    (w, b)
}

fn accumulate_layer_grad(
    grad: &mut [f64],
    o: LayerOffsets,
    d_z: ArrayView2<'_, f64>,
    layer_input: ArrayView2<'_, f64>,
) {
    let mut dw = ArrayViewMut2::from_shape((o.rows, o.cols), &mut grad[o.weight..o.bias])
        .expect("layout");
    general_mat_mul(1.0, &d_z.t(), &layer_input, 1.0, &mut dw);
    let db = d_z.sum_axis(Axis(0));
    grad[o.bias..o.bias + o.rows]
        .iter_mut()
        .zip(db.iter())
        .for_each(|(g, d)| *g += d);
}

fn concat_row(x: &[f64], eta: &[f64]) -> Vec<f64> {
    x.iter().chain(eta).copied().collect()
}

/// Stacks `[x | η]` rows and `y` rows for tuples sharing one context vector.
pub fn stack_tuples(batch: &[&DataTuple], eta: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let x_len = batch[0].x.len();
    let y_len = batch[0].y.len();
    let mut inputs = Array2::<f64>::zeros((batch.len(), x_len + eta.len()));
    let mut targets = Array2::<f64>::zeros((batch.len(), y_len));
    for (r, t) in batch.iter().enumerate() {
        let mut row = inputs.row_mut(r);
        row.slice_mut(s![..x_len]).assign(&ArrayView1::from(&t.x[..]));
        row.slice_mut(s![x_len..]).assign(&ArrayView1::from(eta));
        targets.row_mut(r).assign(&ArrayView1::from(&t.y[..]));
    }
    (inputs, targets)
}

/// Loss and gradients of one system's tuples under context `eta`.
///
/// The loss is the mean over tuples and output elements of the squared
/// error; both gradients share that normalization.
pub fn mse_loss_and_grads(
    theta: &Theta,
    eta: &[f64],
    batch: &[DataTuple],
) -> Result<(f64, GradientPair)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let system = batch[0].system_id;
    if batch.iter().any(|t| t.system_id != system) {
        return Err(Error::InvalidArgument("batch mixes systems".into()));
    }
    let refs: Vec<&DataTuple> = batch.iter().collect();
    let (inputs, targets) = stack_tuples(&refs, eta);
    let g = theta.batch_gradient(inputs.view(), targets.view(), GradMode::Full)?;
    let x_len = batch[0].x.len();
    Ok((
        g.loss,
        GradientPair {
            d_theta: g.d_theta.expect("full mode"),
            d_eta: g.d_input.slice(s![.., x_len..]).sum_axis(Axis(0)).to_vec(),
        },
    ))
}

/// Mean squared error and `∂/∂η` for one system, weights untouched.
pub fn eta_loss_and_grad(theta: &Theta, eta: &[f64], batch: &[&DataTuple]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (inputs, targets) = stack_tuples(batch, eta);
    let g = theta.batch_gradient(inputs.view(), targets.view(), GradMode::InputOnly)?;
    let x_len = batch[0].x.len();
    Ok((
        g.loss,
        g.d_input.slice(s![.., x_len..]).sum_axis(Axis(0)).to_vec(),
    ))
}

/// Row-wise predictions for tuples sharing `eta`.
pub fn predict_tuples(theta: &Theta, eta: &[f64], tuples: &[&DataTuple]) -> Result<Array2<f64>> {
    if tuples.is_empty() {
        return Ok(Array2::zeros((0, theta.spec().output_dim)));
    }
    let (inputs, _) = stack_tuples(tuples, eta);
    theta.predict(inputs.view())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_tls_parameter_count_near_15k() {
        let spec = NetworkSpec::dynamics(4, 1);
        assert_eq!(spec.param_count(), 14_899);
        let mlp = NetworkSpec::plain(4, 7, 50, 4);
        assert_eq!(mlp.param_count(), 15_754);
    }

    #[test]
    fn weight_shapes_follow_concatenation() {
        let spec = NetworkSpec::dense(5, 3, 25, 4);
        assert_eq!(spec.weight_shapes(), vec![(25, 5), (25, 30), (25, 55), (4, 80)]);
        let plain = NetworkSpec::plain(5, 3, 25, 4);
        assert_eq!(plain.weight_shapes(), vec![(25, 5), (25, 25), (25, 25), (4, 25)]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let theta = Theta::zeros(NetworkSpec::dynamics(4, 1)).unwrap();
        assert_eq!(theta.forward(&[0.3, 0.1, -0.2, 0.5], &[1.7]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn selector_output_layer() {
        let spec = NetworkSpec::dense(5, 2, 3, 4);
        let mut theta = Theta::zeros(spec).unwrap();
        let mut w = theta.weight_mut(2);
        for i in 0..4 {
            w[(i, i)] = 1.0;
        }
        let x = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(theta.forward(&x, &[9.0]).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let theta = Theta::init(NetworkSpec::dynamics(4, 1), 1).unwrap();
        let g = theta.backward(&[0.1, 0.2, 0.3, 0.4], &[0.5], &[0.0; 4]).unwrap();
        assert!(g.d_theta.iter().all(|&v| v == 0.0));
        assert_eq!(g.d_eta, vec![0.0]);
    }

    #[test]
    fn eta_columns_untouched_give_zero_eta_gradient() {
        let spec = NetworkSpec::dense(3, 2, 4, 2);
        let mut theta = Theta::init(spec, 3).unwrap();
        // η is input column 2; zero every weight that reads it.
        for layer in 0..3 {
            theta.weight_mut(layer).column_mut(2).fill(0.0);
        }
        let g = theta.backward(&[0.3, -0.4], &[0.8], &[1.0, -2.0]).unwrap();
        assert_eq!(g.d_eta, vec![0.0]);
    }

    #[test]
    fn dimension_errors() {
        let theta = Theta::init(NetworkSpec::dynamics(4, 1), 1).unwrap();
        assert!(theta.forward(&[0.0; 4], &[0.0, 0.0]).is_err());
        assert!(theta.backward(&[0.0; 4], &[0.0], &[0.0; 3]).is_err());
    }

    #[test]
    fn mse_examples() {
        let spec = NetworkSpec::dense(2, 1, 2, 1);
        let mut theta = Theta::zeros(spec).unwrap();
        theta.bias_mut(1)[0] = 0.5;
        let batch = vec![DataTuple { system_id: 0, x: vec![0.2], y: vec![0.0] }];
        let (loss, _) = mse_loss_and_grads(&theta, &[0.0], &batch).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);

        let exact = vec![DataTuple { system_id: 0, x: vec![0.2], y: vec![0.5] }];
        let (loss, g) = mse_loss_and_grads(&theta, &[0.0], &exact).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.d_theta.iter().all(|&v| v == 0.0));

        assert!(mse_loss_and_grads(&theta, &[0.0], &[]).is_err());
    }
}
