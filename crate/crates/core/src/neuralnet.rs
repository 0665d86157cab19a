//! Fully connected feed-forward network trained by mini-batch SGD on
//! squared error, with validation-based early stopping.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::prepare::DesignMatrix;
use crate::randmath::RngState;
use crate::scalar::{Scalar, Strided};

const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Relu, Self::Sigmoid, Self::Tanh, Self::Identity];

    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Self::Relu => z.max(T::zero()),
            Self::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Self::Tanh => z.tanh(),
            Self::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = φ(z)`.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Self::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Sigmoid => a * (T::one() - a),
            Self::Tanh => T::one() - a * a,
            Self::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input width first, output width (1) last.
    pub layer_sizes: Vec<usize>,
    /// One per non-input layer.
    pub activations: Vec<Activation>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let arch = Self {
            layer_sizes,
            activations,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `input → hidden… → 1`, hidden layers sharing one activation and an
    /// identity output.
    pub fn regression(input: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut acts = vec![activation; hidden.len()];
        acts.push(Activation::Identity);
        Self::new(sizes, acts)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layer_sizes.len();
        if l < 2 {
            return Err(Error::InvalidSpec(format!("network needs at least 2 layers, got {l}")));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidSpec("layer sizes must be positive".into()));
        }
        if self.activations.len() != l - 1 {
            return Err(Error::InvalidSpec(format!(
                "{} activations for {} non-input layers",
                self.activations.len(),
                l - 1
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Compact label such as `20-32-16-1 relu`.
    pub fn label(&self) -> String {
        let sizes = self
            .layer_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("-");
        let hidden = &self.activations[..self.activations.len() - 1];
        match hidden.first() {
            Some(a) if hidden.iter().all(|h| h == a) => {
                format!("{sizes} {}", serde_json::to_value(a).unwrap().as_str().unwrap())
            }
            None => sizes,
            _ => format!("{sizes} mixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Mlp<T: Scalar> {
    pub architecture: Architecture,
    /// `weights[i]` is `n[i] × n[i+1]`, row-major.
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Every weight and bias zero.
    pub fn zeros(architecture: Architecture) -> Self {
        let s = &architecture.layer_sizes;
        let weights = s.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect();
        let biases = s[1..].iter().map(|&n| vec![T::zero(); n]).collect();
        Self {
            architecture,
            weights,
            biases,
        }
    }

    pub fn layers(&self) -> usize {
        self.architecture.layer_sizes.len()
    }

    pub fn input_width(&self) -> usize {
        self.architecture.input_width()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(Matrix::all_finite)
            && self.biases.iter().flatten().all(|b| b.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let s = &self.architecture.layer_sizes;
        let shapes_ok = self.weights.len() == s.len() - 1
            && self.biases.len() == s.len() - 1
            && s.windows(2)
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(w, (m, b))| m.rows() == w[0] && m.cols() == w[1] && b.len() == w[1]);
        if !shapes_ok {
            return Err(Error::InvalidSpec("weight shapes disagree with architecture".into()));
        }
        if !self.all_finite() {
            return Err(Error::InvalidSpec("non-finite network parameter".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_network<T: Scalar>(arch: &Architecture, rng: RngState) -> Result<Mlp<T>> {
    arch.validate()?;
    let mut rng = rng.rng();
    let mut net = Mlp::zeros(arch.clone());
    for w in &mut net.weights {
        let bound = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
        for v in w.as_mut_slice() {
            *v = T::of(rng.random_range(-bound..=bound));
        }
    }
    Ok(net)
}

/// Per-layer activations of one forward pass, input first.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<T> {
    pub layers: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn prediction(&self) -> T {
        self.layers.last().expect("at least two layers")[0]
    }
}

/// Forward pass for one input row.
pub fn forward<T: Scalar>(net: &Mlp<T>, input: &[T]) -> Result<ForwardPass<T>> {
    if input.len() != net.input_width() {
        return Err(Error::WidthMismatch {
            expected: net.input_width(),
            actual: input.len(),
        });
    }
    let mut ws = Workspace::new(net, 1);
    ws.forward(net, &Matrix::from_vec(1, input.len(), input.to_vec()), &[0])?;
    Ok(ForwardPass { layers: ws.acts })
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        let z = Mlp::<T>::zeros(net.architecture.clone());
        Self {
            weights: z.weights,
            biases: z.biases,
        }
    }

    pub fn max_abs(&self) -> T {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter())
            .chain(self.biases.iter().flatten())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Buffers for up to `cap` rows at a time; each layer is a row-major
/// `rows × width` block.
struct Workspace<T> {
    cap: usize,
    acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
    grad: Gradient<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(net: &Mlp<T>, cap: usize) -> Self {
        let sizes = &net.architecture.layer_sizes;
        Self {
            cap,
            acts: sizes.iter().map(|&n| vec![T::zero(); n * cap]).collect(),
            deltas: sizes[1..].iter().map(|&n| vec![T::zero(); n * cap]).collect(),
            grad: Gradient::zeros_like(net),
        }
    }

    /// Forward pass over `rows` of `x`; the activations stay in `acts`.
    fn forward(&mut self, net: &Mlp<T>, x: &Matrix<T>, rows: &[usize]) -> Result<()> {
        let m = rows.len();
        debug_assert!(m <= self.cap);
        let sizes = &net.architecture.layer_sizes;
        let n0 = sizes[0];
        for (r, &i) in rows.iter().enumerate() {
            self.acts[0][r * n0..(r + 1) * n0].copy_from_slice(x.row(i));
        }
        for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
            let (nin, nout) = (sizes[l], sizes[l + 1]);
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let prev = &head[l][..m * nin];
            let next = &mut tail[0][..m * nout];
            for row in next.chunks_exact_mut(nout) {
                row.copy_from_slice(b);
            }
            T::gemm(m, nin, nout, Strided::row_major(prev, nin), Strided::row_major(w.as_slice(), nout), T::one(), next, nout);
            let act = net.architecture.activations[l];
            let mut finite = true;
            for v in next.iter_mut() {
                *v = act.apply(*v);
                finite &= v.is_finite();
            }
            if !finite {
                return Err(Error::NonFiniteActivation { layer: l + 1 });
            }
        }
        Ok(())
    }

    fn predictions(&self, m: usize) -> &[T] {
        &self.acts.last().expect("at least two layers")[..m]
    }

    /// Mean squared-error gradient over `rows` into `grad`; returns the sum
    /// of squared residuals.
    fn gradient(&mut self, net: &Mlp<T>, x: &Matrix<T>, y: &[T], rows: &[usize]) -> Result<T> {
        self.forward(net, x, rows)?;
        let m = rows.len();
        let sizes = &net.architecture.layer_sizes;
        let last = net.weights.len() - 1;
        let scale = T::of(2.0) / T::of_usize(m);
        let mut sse = T::zero();
        {
            let act = net.architecture.activations[last];
            let out = &self.acts[last + 1][..m];
            for ((d, &a), &i) in self.deltas[last][..m].iter_mut().zip(out).zip(rows) {
                let r = a - y[i];
                sse += r * r;
                *d = scale * r * act.derivative_from_output(a);
            }
        }
        for l in (0..=last).rev() {
            let (nin, nout) = (sizes[l], sizes[l + 1]);
            let input = &self.acts[l][..m * nin];
            let (lower, upper) = self.deltas.split_at_mut(l);
            let delta = &upper[0][..m * nout];
            T::gemm(
                nin,
                m,
                nout,
                Strided::transposed(input, nin),
                Strided::row_major(delta, nout),
                T::zero(),
                self.grad.weights[l].as_mut_slice(),
                nout,
            );
            let gb = &mut self.grad.biases[l];
            gb.fill(T::zero());
            for row in delta.chunks_exact(nout) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let prev = &mut lower[l - 1][..m * nin];
                T::gemm(
                    m,
                    nout,
                    nin,
                    Strided::row_major(delta, nout),
                    Strided::transposed(net.weights[l].as_slice(), nout),
                    T::zero(),
                    prev,
                    nin,
                );
                let act = net.architecture.activations[l - 1];
                for (d, &a) in prev.iter_mut().zip(input) {
                    *d *= act.derivative_from_output(a);
                }
            }
        }
        Ok(sse)
    }

    fn mse(&mut self, net: &Mlp<T>, x: &Matrix<T>, y: &[T], rows: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in rows.chunks(self.cap) {
            self.forward(net, x, chunk)?;
            for (&p, &i) in self.predictions(chunk.len()).iter().zip(chunk) {
                let r = (p - y[i]).as_f64();
                total += r * r;
            }
        }
        Ok(total / rows.len() as f64)
    }
}

/// Exact gradient of the batch mean squared error.
pub fn backprop_gradient<T: Scalar>(net: &Mlp<T>, inputs: &Matrix<T>, targets: &[T]) -> Result<Gradient<T>> {
    if inputs.rows() == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    if inputs.rows() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: targets.len(),
        });
    }
    if inputs.cols() != net.input_width() {
        return Err(Error::WidthMismatch {
            expected: net.input_width(),
            actual: inputs.cols(),
        });
    }
    let rows: Vec<usize> = (0..targets.len()).collect();
    let mut ws = Workspace::new(net, rows.len());
    ws.gradient(net, inputs, targets, &rows)?;
    Ok(ws.grad)
}

/// `θ ← θ − ζ·∇`.
pub fn sgd_step<T: Scalar>(net: &mut Mlp<T>, grad: &Gradient<T>, learning_rate: T) {
    for (w, g) in net.weights.iter_mut().zip(&grad.weights) {
        for (v, &d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *v -= learning_rate * d;
        }
    }
    for (b, g) in net.biases.iter_mut().zip(&grad.biases) {
        for (v, &d) in b.iter_mut().zip(g) {
            *v -= learning_rate * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: RngState,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            max_epochs: 500,
            patience: 20,
            validation_fraction: 0.1,
            seed: RngState::new(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    /// Mean batch loss seen during each epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Zero-based epoch whose weights were returned.
    pub best_epoch: usize,
    /// MSE of the returned network over every row passed to `train`.
    pub final_train_mse: f64,
}

/// Mini-batch SGD with early stopping on a held-out validation slice.
///
/// The slice is `validation_fraction` of the rows, drawn once from the
/// config seed. Training stops after `patience` consecutive epochs without
/// a new validation minimum and returns the weights of the best epoch.
pub fn train<T: Scalar>(net: &Mlp<T>, dm: &DesignMatrix<T>, y: &[T], config: &TrainConfig) -> Result<(Mlp<T>, FitReport)> {
    train_matrix(net, &dm.values, y, config)
}

pub fn train_matrix<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>, y: &[T], config: &TrainConfig) -> Result<(Mlp<T>, FitReport)> {
    config.validate()?;
    net.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if x.cols() != net.input_width() {
        return Err(Error::WidthMismatch {
            expected: net.input_width(),
            actual: x.cols(),
        });
    }
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::Degenerate(format!("{n} rows leave nothing to train on")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut config.seed.substream(1).rng());
    let (val_rows, train_rows) = order.split_at(n_val);
    let (val_rows, mut train_rows) = (val_rows.to_vec(), train_rows.to_vec());
    if config.batch_size > train_rows.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds {} training rows",
            config.batch_size,
            train_rows.len()
        )));
    }

    let lr = T::of(config.learning_rate);
    let mut shuffle_rng = config.seed.substream(2).rng();
    let mut current = net.clone();
    let mut best = net.clone();
    let mut ws = Workspace::new(net, config.batch_size.max(PREDICT_CHUNK));
    let mut report = FitReport {
        epochs_run: 0,
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        final_train_mse: f64::NAN,
    };
    let mut best_val = f64::INFINITY;
    let mut bad_epochs = 0;

    for epoch in 0..config.max_epochs {
        train_rows.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in train_rows.chunks(config.batch_size) {
            let batch_loss = ws
                .gradient(&current, x, y, batch)
                .map_err(|_| Error::Diverged { epoch })?;
            sgd_step(&mut current, &ws.grad, lr);
            epoch_loss += batch_loss.as_f64();
        }
        let train_loss = epoch_loss / train_rows.len() as f64;
        if !train_loss.is_finite() || !current.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_loss = ws.mse(&current, x, y, &val_rows).map_err(|_| Error::Diverged { epoch })?;
        report.train_loss.push(train_loss);
        report.validation_loss.push(val_loss);
        report.epochs_run = epoch + 1;
        if val_loss < best_val {
            best_val = val_loss;
            best.clone_from(&current);
            report.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > config.patience {
                break;
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    report.final_train_mse = ws.mse(&best, x, y, &all)?;
    Ok((best, report))
}

/// One prediction per design row.
pub fn predict_nn<T: Scalar>(net: &Mlp<T>, dm: &DesignMatrix<T>) -> Result<Vec<T>> {
    predict_matrix(net, &dm.values)
}

pub fn predict_matrix<T: Scalar>(net: &Mlp<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    if x.cols() != net.input_width() {
        return Err(Error::WidthMismatch {
            expected: net.input_width(),
            actual: x.cols(),
        });
    }
    let mut ws = Workspace::new(net, PREDICT_CHUNK.min(x.rows().max(1)));
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for chunk in rows.chunks(ws.cap) {
        ws.forward(net, x, chunk)?;
        out.extend_from_slice(ws.predictions(chunk.len()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_bounds() {
        let arch = Architecture::new(vec![2, 3, 5, 1], vec![Activation::Relu, Activation::Relu, Activation::Identity]).unwrap();
        let net: Mlp<f64> = init_network(&arch, RngState::new(3)).unwrap();
        let shapes: Vec<_> = net.weights.iter().map(|w| (w.rows(), w.cols())).collect();
        assert_eq!(shapes, vec![(2, 3), (3, 5), (5, 1)]);
        assert!(net.weights.iter().flat_map(|w| w.as_slice()).all(|v| v.abs() <= 6f64.sqrt()));
        assert!(net.biases.iter().flatten().all(|&b| b == 0.0));
        assert_eq!(net, init_network(&arch, RngState::new(3)).unwrap());
    }

    #[test]
    fn bad_architectures() {
        assert!(Architecture::new(vec![3], vec![]).is_err());
        assert!(Architecture::new(vec![3, 0, 1], vec![Activation::Relu; 2]).is_err());
        assert!(Architecture::new(vec![3, 1], vec![]).is_err());
    }

    #[test]
    fn linear_layer_is_dot_product() {
        let arch = Architecture::new(vec![3, 1], vec![Activation::Identity]).unwrap();
        let mut net = Mlp::<f64>::zeros(arch);
        net.weights[0] = Matrix::from_vec(3, 1, vec![1.0, -2.0, 0.5]);
        let p = forward(&net, &[2.0, 1.0, 4.0]).unwrap().prediction();
        assert_eq!(p, 2.0);
    }

    #[test]
    fn negative_relu_is_zero() {
        let arch = Architecture::new(vec![2, 3, 1], vec![Activation::Relu, Activation::Identity]).unwrap();
        let mut net = Mlp::<f64>::zeros(arch);
        net.biases[0] = vec![-1.0, -2.0, -0.5];
        let pass = forward(&net, &[0.0, 0.0]).unwrap();
        assert_eq!(pass.layers[1], vec![0.0; 3]);
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let arch = Architecture::regression(2, &[4], Activation::Tanh).unwrap();
        let net: Mlp<f64> = init_network(&arch, RngState::new(9)).unwrap();
        let x = Matrix::from_vec(2, 2, vec![0.3, -0.2, 1.0, 0.5]);
        let y = predict_matrix(&net, &x).unwrap();
        let g = backprop_gradient(&net, &x, &y).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn zero_step_is_noop() {
        let arch = Architecture::regression(2, &[3], Activation::Sigmoid).unwrap();
        let mut net: Mlp<f64> = init_network(&arch, RngState::new(1)).unwrap();
        let before = net.clone();
        let g = Gradient::zeros_like(&net);
        sgd_step(&mut net, &g, 0.1);
        assert_eq!(net, before);
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        let g = backprop_gradient(&net, &x, &[5.0]).unwrap();
        sgd_step(&mut net, &g, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn predict_width_mismatch() {
        let arch = Architecture::regression(2, &[], Activation::Relu).unwrap();
        let net = Mlp::<f64>::zeros(arch);
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        assert!(matches!(predict_matrix(&net, &x), Err(Error::WidthMismatch { .. })));
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(predict_matrix(&net, &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn json_round_trip() {
        let arch = Architecture::regression(3, &[4, 2], Activation::Relu).unwrap();
        let net: Mlp<f64> = init_network(&arch, RngState::new(4)).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.contains("\"relu\""));
        let back: Mlp<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
        assert_eq!(arch.label(), "3-4-2-1 relu");
    }
}
