use crate::error::{Error, Result};
use crate::numcore::{self, GradTape, Tensor, Var};
use crate::rng::StreamKey;

/// Architecture of a residual conv net: `in -> widths[0] -> ... -> in`.
///
/// Each hidden width adds one conv+relu stage; the final conv maps back to
/// the input channel count and its output is added to the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub init_seed: u64,
    /// Zero the last layer so the untrained net is the identity map.
    pub zero_final: bool,
}

impl ModelConfig {
    /// 3 conv layers, 16 channels, 3x3 kernels.
    pub fn desk(in_channels: usize, init_seed: u64) -> Self {
        ModelConfig {
            widths: vec![16, 16],
            kernel_size: 3,
            in_channels,
            init_seed,
            zero_final: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if self.widths.is_empty() {
            return Err(Error::invalid("model needs at least one hidden layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::invalid(format!(
                "input channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        Ok(())
    }

    /// `(in, out)` channel pairs of every conv layer.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        let mut chans = Vec::with_capacity(self.widths.len() + 1);
        let mut prev = self.in_channels;
        for &w in &self.widths {
            chans.push((prev, w));
            prev = w;
        }
        chans.push((prev, self.in_channels));
        chans
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }
}

/// Kernels and biases, interleaved `[k0, b0, k1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

/// Stacked `(degraded, clean)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub degraded: Tensor,
    pub clean: Tensor,
}

impl PairBatch {
    pub fn new(degraded: Tensor, clean: Tensor) -> Result<Self> {
        degraded.dims4()?;
        if degraded.shape() != clean.shape() {
            return Err(Error::shape(format!(
                "degraded {:?} and clean {:?} differ in shape",
                degraded.shape(),
                clean.shape()
            )));
        }
        Ok(PairBatch { degraded, clean })
    }

    /// Stack `[C,H,W]` images into a batch.
    pub fn from_images(pairs: &[(&Tensor, &Tensor)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("empty pair set"));
        }
        let d: Vec<&Tensor> = pairs.iter().map(|p| p.0).collect();
        let c: Vec<&Tensor> = pairs.iter().map(|p| p.1).collect();
        PairBatch::new(Tensor::stack(&d)?, Tensor::stack(&c)?)
    }

    pub fn len(&self) -> usize {
        self.degraded.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let key = StreamKey::raw(config.init_seed, 0).named("init");
    let k = config.kernel_size;
    let layers = config.layer_channels();
    let mut tensors = Vec::with_capacity(layers.len() * 2);
    for (i, &(cin, cout)) in layers.iter().enumerate() {
        let shape = [cout, cin, k, k];
        let last = i + 1 == layers.len();
        let kernel = if last && config.zero_final {
            Tensor::zeros(&shape)?
        } else {
            // He scaling for relu fan-in.
            let std = (2.0 / (cin * k * k) as f32).sqrt();
            Tensor::randn(&shape, key.child(i as u64), std)?
        };
        tensors.push(kernel);
        tensors.push(Tensor::zeros(&[cout])?);
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

impl ModelParams {
    pub fn from_parts(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_channels();
        if tensors.len() != layers.len() * 2 {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                layers.len() * 2,
                tensors.len()
            )));
        }
        let k = config.kernel_size;
        for (i, &(cin, cout)) in layers.iter().enumerate() {
            if tensors[2 * i].shape() != [cout, cin, k, k] || tensors[2 * i + 1].shape() != [cout] {
                return Err(Error::shape(format!("layer {i} parameters do not match the config")));
            }
        }
        if tensors.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite parameter value"));
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let [_, c, _, _] = batch.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "model expects {} channels, batch has {c}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Residual forward pass: `x + net(x)`, unclipped.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let pad = self.config.padding();
        let n = self.tensors.len() / 2;
        let mut h = batch.clone().with_grad(false);
        for i in 0..n {
            h = numcore::conv2d(&h, &self.tensors[2 * i], pad)?;
            h = numcore::add_bias(&h, &self.tensors[2 * i + 1])?;
            if i + 1 < n {
                h = numcore::relu(&h);
            }
        }
        numcore::add(batch, &h)
    }

    /// Record the forward pass on `tape`. Returns the parameter handles and the output.
    pub fn forward_on_tape(&self, tape: &mut GradTape, input: Var) -> Result<(Vec<Var>, Var)> {
        self.check_input(tape.value(input))?;
        let pad = self.config.padding();
        let params: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone().with_grad(true)))
            .collect();
        let n = params.len() / 2;
        let mut h = input;
        for i in 0..n {
            h = tape.conv2d(h, params[2 * i], pad)?;
            h = tape.add_bias(h, params[2 * i + 1])?;
            if i + 1 < n {
                h = tape.relu(h)?;
            }
        }
        let out = tape.add(input, h)?;
        Ok((params, out))
    }

    /// Batch MSE and its gradient with respect to every parameter tensor.
    pub fn loss_and_grad(&self, batch: &PairBatch) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = GradTape::new();
        let x = tape.leaf(batch.degraded.clone().with_grad(false));
        let y = tape.leaf(batch.clean.clone().with_grad(false));
        let (params, out) = self.forward_on_tape(&mut tape, x)?;
        let loss = tape.mse(out, y)?;
        let value = tape.scalar(loss);
        let mut grads = tape.backward(loss)?;
        let g = params
            .iter()
            .map(|&p| grads.take(p).ok_or_else(|| Error::invalid("missing parameter gradient")))
            .collect::<Result<Vec<_>>>()?;
        Ok((value, g))
    }

    /// One SGD step on `batch`, returning the updated parameters.
    pub fn sgd_updated(&self, batch: &PairBatch, lr: f32) -> Result<ModelParams> {
        let (_, grads) = self.loss_and_grad(batch)?;
        let mut next = self.clone();
        numcore::sgd_step_in_place(&mut next.tensors, &grads, lr)?;
        Ok(next)
    }
}

/// Mean MSE between `forward(degraded)` and `clean` over a training batch.
pub fn training_loss(params: &ModelParams, pairs: &PairBatch) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    numcore::mse_loss(&params.forward(&pairs.degraded)?, &pairs.clean)
}

/// Mean MSE over a whole evaluation set. Pure: no parameter update, no RNG.
pub fn validation_loss(params: &ModelParams, set: &PairBatch) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    numcore::mse_loss(&params.forward(&set.degraded)?, &set.clean)
}
