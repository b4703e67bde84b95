//! One-hidden-layer encoder trained by minibatch SGD on the mean squared
//! distance between encoded content and the target embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// feature_dim x hidden
    pub w1: FeatureMatrix,
    /// hidden x embedding_dim
    pub w2: FeatureMatrix,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            activation: Activation::Tanh,
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("mlp learning_rate must be positive".into()));
        }
        Ok(())
    }
}

fn matmul(a: &FeatureMatrix, b: &FeatureMatrix) -> FeatureMatrix {
    let mut out = FeatureMatrix::zeros(a.rows(), b.cols());
    for r in 0..a.rows() {
        let arow = a.row(r);
        let orow = out.row_mut(r);
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    }
    out
}

impl MlpParams {
    pub fn init(input: usize, hidden: usize, output: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, (1.0 / rows as f64).sqrt()).expect("finite std");
            let v = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            FeatureMatrix::from_vec(rows, cols, v).expect("shape")
        };
        let w1 = draw(input, hidden);
        let w2 = draw(hidden, output);
        Self { w1, w2, activation }
    }

    fn hidden_pre(&self, x: &FeatureMatrix) -> FeatureMatrix {
        matmul(x, &self.w1)
    }

    pub fn forward(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut h = self.hidden_pre(x);
        h.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = self.activation.apply(*v));
        matmul(&h, &self.w2)
    }
}

/// Mean over rows of the squared distance between `forward(x)` and `targets`,
/// with its gradient as `(d w1, d w2)`.
pub fn mlp_loss_and_gradient(
    params: &MlpParams,
    x: &FeatureMatrix,
    targets: &FeatureMatrix,
) -> (f64, FeatureMatrix, FeatureMatrix) {
    let n = x.rows().max(1) as f64;
    let pre = params.hidden_pre(x);
    let mut h = pre.clone();
    h.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = params.activation.apply(*v));
    let out = matmul(&h, &params.w2);

    let mut loss = 0.0;
    let mut d_out = FeatureMatrix::zeros(out.rows(), out.cols());
    for ((d, o), t) in d_out
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_slice())
        .zip(targets.as_slice())
    {
        let diff = o - t;
        loss += diff * diff;
        *d = 2.0 * diff / n;
    }
    loss /= n;

    let hidden = params.w2.rows();
    let dim = params.w2.cols();
    let mut g2 = FeatureMatrix::zeros(hidden, dim);
    for r in 0..h.rows() {
        let hr = h.row(r);
        let dr = d_out.row(r);
        for (j, &hv) in hr.iter().enumerate() {
            for (g, &dv) in g2.row_mut(j).iter_mut().zip(dr) {
                *g += hv * dv;
            }
        }
    }
    // d pre = (d_out W2^T) * act'(pre)
    let mut d_pre = FeatureMatrix::zeros(h.rows(), hidden);
    for r in 0..h.rows() {
        let dr = d_out.row(r);
        let prow = pre.row(r);
        for (j, dp) in d_pre.row_mut(r).iter_mut().enumerate() {
            let s: f64 = params.w2.row(j).iter().zip(dr).map(|(w, d)| w * d).sum();
            *dp = s * params.activation.derivative(prow[j]);
        }
    }
    let mut g1 = FeatureMatrix::zeros(params.w1.rows(), hidden);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dr = d_pre.row(r);
        for (f, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (g, &dv) in g1.row_mut(f).iter_mut().zip(dr) {
                *g += xv * dv;
            }
        }
    }
    (loss, g1, g2)
}

pub fn train_mlp(x: &FeatureMatrix, targets: &FeatureMatrix, cfg: &MlpConfig) -> Result<MlpParams> {
    cfg.validate()?;
    if x.rows() != targets.rows() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} embedding rows",
            x.rows(),
            targets.rows()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("no warm items to fit the encoder on".into()));
    }
    let mut params = MlpParams::init(x.cols(), cfg.hidden, targets.cols(), cfg.activation, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6c_7000);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select_rows(batch)?;
            let tb = targets.select_rows(batch)?;
            let (loss, g1, g2) = mlp_loss_and_gradient(&params, &xb, &tb);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            let lr = cfg.learning_rate;
            params
                .w1
                .as_mut_slice()
                .iter_mut()
                .zip(g1.as_slice())
                .for_each(|(p, g)| *p -= lr * g);
            params
                .w2
                .as_mut_slice()
                .iter_mut()
                .zip(g2.as_slice())
                .for_each(|(p, g)| *p -= lr * g);
        }
    }
    params.w1.ensure_finite("mlp weights")?;
    params.w2.ensure_finite("mlp weights")?;
    Ok(params)
}
