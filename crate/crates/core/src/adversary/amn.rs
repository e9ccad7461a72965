//! Adversarial mutation network: three same-length zero-padded convolutions that
//! emit an additive perturbation. The transmitted frame is `input + perturbation`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::modem::Scheme;
use crate::nn::{frames_to_tensor, tensor_frame, Graph, ParamSet, Tensor, Var};

const HIDDEN: usize = 32;
const KERNEL: usize = 5;
const INFERENCE_BATCH: usize = 64;
const META_SCHEME: &str = "meta.scheme";

/// Scale applied to the default initialisation of the output layer, so a fresh
/// network starts close to the zero perturbation.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct AmnModel {
    params: ParamSet,
    scheme: Scheme,
}

impl AmnModel {
    pub fn new<R: Rng + ?Sized>(scheme: Scheme, rng: &mut R) -> Self {
        Self::with_output_scale(scheme, OUTPUT_INIT_SCALE, rng)
    }

    pub fn with_output_scale<R: Rng + ?Sized>(
        scheme: Scheme,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = ParamSet::new();
        let layers = [
            ("amn.conv1", [HIDDEN, 2, KERNEL], 1.0),
            ("amn.conv2", [HIDDEN, HIDDEN, KERNEL], 1.0),
            ("amn.conv3", [2, HIDDEN, KERNEL], output_scale),
        ];
        for (name, shape, scale) in layers {
            let bound = scale / ((shape[1] * shape[2]) as f64).sqrt();
            let mut w = Tensor::uniform(&shape, bound, rng);
            let mut b = Tensor::uniform(&[shape[0]], bound, rng);
            w.round_to_f32();
            b.round_to_f32();
            p.push(format!("{name}.weight"), w);
            p.push(format!("{name}.bias"), b);
        }
        Self { params: p, scheme }
    }

    /// All-zero weights: emits exactly zero perturbation.
    pub fn zero(scheme: Scheme) -> Self {
        let mut m = Self::with_output_scale(scheme, 0.0, &mut rand::rngs::mock::StepRng::new(0, 0));
        let zeros = m
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        m.params.set_tensors(zeros).unwrap();
        m
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Parameters plus a `meta.scheme` entry recording the target scheme.
    pub fn checkpoint(&self) -> ParamSet {
        let mut p = self.params.clone();
        p.push(META_SCHEME, Tensor::scalar(self.scheme.index() as f64));
        p
    }

    pub fn from_checkpoint(all: ParamSet) -> Result<Self> {
        let template = Self::zero(Scheme::Qpsk);
        let mut params = ParamSet::new();
        let mut scheme = None;
        for (name, t) in all.iter() {
            if name == META_SCHEME {
                scheme = Scheme::from_index(t.item() as usize);
                if scheme.is_none() {
                    return Err(Error::ShapeTable(format!(
                        "unknown scheme index {}",
                        t.item()
                    )));
                }
            } else {
                params.push(name, t.clone());
            }
        }
        template.params.check_layout(&params)?;
        let scheme = scheme.ok_or_else(|| Error::ShapeTable("missing meta.scheme".into()))?;
        Ok(Self { params, scheme })
    }

    /// Records the perturbation for an `[batch, 2, n]` input.
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
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
        let h = g.tanh(h)?;
        let h = g.conv1d(h, vars[2], vars[3])?;
        let h = g.tanh(h)?;
        let p = g.conv1d(h, vars[4], vars[5])?;
        Ok((p, vars))
    }

    /// Perturbation for each frame.
    pub fn perturb(&self, frames: &[&[Complex64]]) -> Result<Vec<Vec<Complex64>>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(INFERENCE_BATCH) {
            let mut g = Graph::new();
            let x = g.input(frames_to_tensor(chunk)?)?;
            let (p, _) = self.forward(&mut g, x, false)?;
            let t = g.value(p);
            out.extend((0..chunk.len()).map(|b| tensor_frame(t, b)));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_dataset, seeded_rng};

    fn frames(n: usize) -> Vec<Vec<Complex64>> {
        generate_dataset(Scheme::Qpsk, n, 4)
            .unwrap()
            .into_iter()
            .map(|f| f.signal.into_samples())
            .collect()
    }

    #[test]
    fn perturbation_keeps_frame_length() {
        let amn = AmnModel::new(Scheme::Qpsk, &mut seeded_rng(0, 0));
        let f = frames(70);
        let refs: Vec<&[Complex64]> = f.iter().map(|x| x.as_slice()).collect();
        let p = amn.perturb(&refs).unwrap();
        assert_eq!(p.len(), 70);
        assert!(p.iter().all(|x| x.len() == 128));
        assert!(p.iter().flatten().any(|z| z.norm() > 0.0));
    }

    #[test]
    fn zero_model_is_silent() {
        let f = frames(3);
        let refs: Vec<&[Complex64]> = f.iter().map(|x| x.as_slice()).collect();
        let p = AmnModel::zero(Scheme::Qpsk).perturb(&refs).unwrap();
        assert!(p.iter().flatten().all(|z| z.re == 0.0 && z.im == 0.0));
    }

    #[test]
    fn output_layer_starts_small() {
        let full = AmnModel::with_output_scale(Scheme::Qpsk, 1.0, &mut seeded_rng(3, 0));
        let small = AmnModel::new(Scheme::Qpsk, &mut seeded_rng(3, 0));
        let rms = |m: &AmnModel| {
            let w = m.params().get("amn.conv3.weight").unwrap();
            (w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64).sqrt()
        };
        let ratio = rms(&small) / rms(&full);
        assert!((ratio - OUTPUT_INIT_SCALE).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn checkpoint_records_scheme() {
        let amn = AmnModel::new(Scheme::Qam16, &mut seeded_rng(1, 0));
        let back = AmnModel::from_checkpoint(amn.checkpoint()).unwrap();
        assert_eq!(back, amn);

        assert!(AmnModel::from_checkpoint(amn.params().clone()).is_err());
        let mut bad = amn.params().clone();
        bad.push(META_SCHEME, Tensor::scalar(9.0));
        assert!(AmnModel::from_checkpoint(bad).is_err());
    }
}
