//! Eavesdropper modulation classifier:
//! `2x128 -> conv(64, 8) relu -> conv(32, 8) relu -> dense(128) relu -> dense(5) -> softmax`.

use num_complex::Complex64;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::modem::{Scheme, FRAME_LEN};
use crate::nn::{frames_to_tensor, Graph, ParamSet, Tensor, Var};
use crate::signal::IQSignal;

pub const NUM_CLASSES: usize = 5;
const INFERENCE_BATCH: usize = 64;

/// Layer widths of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmcArch {
    pub conv1: usize,
    pub conv2: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for AmcArch {
    fn default() -> Self {
        Self {
            conv1: 64,
            conv2: 32,
            kernel: 8,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmcModel {
    params: ParamSet,
    /// Dropout before the output layer while training; 0 disables it.
    pub dropout: f64,
}

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
fn layer<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, wshape: &[usize], rng: &mut R) {
    let fan_in: usize = wshape[1..].iter().product();
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut w = Tensor::uniform(wshape, bound, rng);
    let mut b = Tensor::uniform(&[wshape[0]], bound, rng);
    w.round_to_f32();
    b.round_to_f32();
    p.push(format!("{name}.weight"), w);
    p.push(format!("{name}.bias"), b);
}

impl AmcModel {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::with_arch(AmcArch::default(), rng)
    }

    pub fn with_arch<R: Rng + ?Sized>(arch: AmcArch, rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        layer(&mut p, "amc.conv1", &[arch.conv1, 2, arch.kernel], rng);
        layer(
            &mut p,
            "amc.conv2",
            &[arch.conv2, arch.conv1, arch.kernel],
            rng,
        );
        layer(
            &mut p,
            "amc.fc1",
            &[arch.hidden, arch.conv2 * FRAME_LEN],
            rng,
        );
        layer(&mut p, "amc.fc2", &[NUM_CLASSES, arch.hidden], rng);
        Self {
            params: p,
            dropout: 0.0,
        }
    }

    /// Rebuilds a model from checkpoint tensors, checking names and shapes.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let arch = AmcArch {
            conv1: dim(&params, "amc.conv1.weight", 0)?,
            conv2: dim(&params, "amc.conv2.weight", 0)?,
            kernel: dim(&params, "amc.conv1.weight", 2)?,
            hidden: dim(&params, "amc.fc1.weight", 0)?,
        };
        let template = Self::with_arch(arch, &mut rand::rngs::mock::StepRng::new(0, 0));
        template.params.check_layout(&params)?;
        Ok(Self {
            params,
            dropout: 0.0,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the forward pass on `g` for an `[batch, 2, 128]` input and returns
    /// the `[batch, 5]` probabilities plus the parameter nodes. With
    /// `trainable == false` the parameters enter as constants.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        trainable: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Vec<Var>)> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let h = g.conv1d(x, vars[0], vars[1])?;
        let h = g.relu(h)?;
        let h = g.conv1d(h, vars[2], vars[3])?;
        let h = g.relu(h)?;
        let h = g.dense(h, vars[4], vars[5])?;
        let mut h = g.relu(h)?;
        if let Some(rng) = rng {
            if self.dropout > 0.0 {
                h = g.dropout(h, self.dropout, rng)?;
            }
        }
        let logits = g.dense(h, vars[6], vars[7])?;
        let probs = g.softmax(logits)?;
        Ok((probs, vars))
    }

    /// Class probabilities for each frame.
    pub fn predict(&self, frames: &[&[Complex64]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(INFERENCE_BATCH) {
            let mut g = Graph::new();
            let x = g.input(frames_to_tensor(chunk)?)?;
            let (probs, _) = self.forward(&mut g, x, false, None)?;
            for row in g.value(probs).data().chunks(NUM_CLASSES) {
                out.push(row.try_into().unwrap());
            }
        }
        Ok(out)
    }
}

fn dim(p: &ParamSet, name: &str, axis: usize) -> Result<usize> {
    p.get(name)
        .and_then(|t| t.shape().get(axis).copied())
        .ok_or_else(|| Error::ShapeTable(format!("missing tensor {name}")))
}

/// Probabilities over [`Scheme::ALL`] for one 128-sample frame.
pub fn classify(model: &AmcModel, signal: &IQSignal) -> Result<[f64; NUM_CLASSES]> {
    if signal.len() != FRAME_LEN {
        return Err(Error::LengthMismatch {
            expected: FRAME_LEN,
            actual: signal.len(),
        });
    }
    Ok(model.predict(&[signal.samples()])?[0])
}

pub fn argmax(p: &[f64]) -> usize {
    (0..p.len())
        .max_by(|&a, &b| p[a].total_cmp(&p[b]))
        .unwrap_or(0)
}

pub fn predicted_scheme(p: &[f64]) -> Scheme {
    Scheme::from_index(argmax(p)).unwrap()
}
