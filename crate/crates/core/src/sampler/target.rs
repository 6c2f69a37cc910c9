use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::flow::{standard_normal_log_density, FlowModel};
use crate::nn::{ParamMode, Tape};
use crate::reweight::Classifier;

/// Unnormalized log-density over batches of 2D points.
pub trait LogDensity: Sync {
    fn log_density(&self, z: &Array2<f64>) -> Result<Array1<f64>>;

    /// Log-density and its gradient with respect to each row.
    fn log_density_and_grad(&self, z: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)>;
}

/// `N(0, I)` on ℝ².
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardNormal2;

impl LogDensity for StandardNormal2 {
    fn log_density(&self, z: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(standard_normal_log_density(z))
    }

    fn log_density_and_grad(&self, z: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        Ok((standard_normal_log_density(z), -z))
    }
}

/// Reweighted latent density `log q(z) = log p_Z(z) + log w(g(z))`, up to a constant.
pub struct LatentTarget<'a> {
    pub flow: &'a FlowModel,
    pub classifier: &'a Classifier,
}

impl LatentTarget<'_> {
    fn check(z: &Array2<f64>) -> Result<()> {
        if z.ncols() != 2 {
            return Err(Error::shape("latent target input", 2, z.ncols()));
        }
        Ok(())
    }
}

impl LogDensity for LatentTarget<'_> {
    fn log_density(&self, z: &Array2<f64>) -> Result<Array1<f64>> {
        Self::check(z)?;
        let (x, _) = self.flow.forward(z)?;
        let (lo, hi) = crate::reweight::log_weight_bounds();
        let log_w = self.classifier.logits(&x)?.mapv(|l| l.clamp(lo, hi));
        Ok(standard_normal_log_density(z) + log_w)
    }

    fn log_density_and_grad(&self, z: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        Self::check(z)?;
        let mut tape = Tape::new();
        let zv = tape.var(z.clone());
        let (x, _, _) = self.flow.forward_tape(&mut tape, zv, ParamMode::Frozen)?;
        let log_w = self.classifier.log_weight_tape(&mut tape, x)?;
        let total = tape.sum(log_w);
        let grads = tape.backward(total)?;
        let grad = grads.get_or_zeros(&tape, zv) - z;
        let log_q = tape.value(log_w).index_axis(Axis(1), 0).to_owned() + standard_normal_log_density(z);
        Ok((log_q, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{sample_latent, FlowArch};
    use crate::nn::{Mlp, OutputActivation, DEFAULT_LEAKY_SLOPE};
    use crate::rng::stream_rng;

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let mut rng = stream_rng(1, 0);
        let mut flow = FlowModel::new(FlowArch::new(4, 8), &mut rng).unwrap();
        for b in flow.blocks_mut() {
            let cond = b.cond();
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let m = Mlp::new(&[1, 8, 8, 8, 1], DEFAULT_LEAKY_SLOPE, OutputActivation::Identity, rng).unwrap();
                let layers = m.layers().iter().cloned().map(|mut l| {
                    l.weight *= 0.5;
                    l
                });
                Mlp::from_layers(layers.collect(), DEFAULT_LEAKY_SLOPE, OutputActivation::Identity).unwrap()
            };
            *b = crate::flow::CouplingBlock::new(cond, mk(&mut rng), mk(&mut rng), 4.0).unwrap();
        }
        let clf = Classifier::new(crate::reweight::ClassifierArch { hidden_layers: 3, units: 12 }, &mut rng).unwrap();
        let target = LatentTarget {
            flow: &flow,
            classifier: &clf,
        };
        let z = sample_latent(10, &mut rng);
        let (lq, grad) = target.log_density_and_grad(&z).unwrap();
        let direct = target.log_density(&z).unwrap();
        assert!((&lq - &direct).iter().all(|d| d.abs() < 1e-12));
        let h = 1e-6;
        for i in 0..z.nrows() {
            for j in 0..2 {
                let mut up = z.clone();
                let mut down = z.clone();
                up[[i, j]] += h;
                down[[i, j]] -= h;
                let num = (target.log_density(&up).unwrap()[i] - target.log_density(&down).unwrap()[i]) / (2.0 * h);
                let rel = (num - grad[[i, j]]).abs() / num.abs().max(grad[[i, j]].abs()).max(1e-6);
                assert!(rel < 1e-4, "row {i} dim {j}: {} vs {num}", grad[[i, j]]);
            }
        }
    }
}
