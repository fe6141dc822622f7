use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::Model;
use crate::{Error, Result, TokenId};

use super::{batch_loss_grad, TrainSample};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Name and flat index of the worst parameter.
    pub worst: (String, usize),
    pub checked: usize,
}

fn batch_loss(model: &Model<f64>, batch: &[&TrainSample<f64>], prompt: &[TokenId], sep: TokenId) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        total += super::sample_loss(model, s, prompt, sep, None)?;
    }
    Ok(total / batch.len() as f64)
}

/// Compare analytic gradients against central differences with step
/// `epsilon`. Up to `per_tensor` parameters per tensor are drawn with a
/// seeded generator (all of them when the tensor is smaller).
pub fn grad_check(
    model: &Model<f64>,
    batch: &[TrainSample<f64>],
    prompt: &[TokenId],
    sep: TokenId,
    epsilon: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheck> {
    let refs: Vec<&TrainSample<f64>> = batch.iter().collect();
    let (_, grads) = batch_loss_grad(model, &refs, prompt, sep)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            step: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut worst = (0.0f64, (String::new(), 0usize));
    let mut checked = 0;
    let names: Vec<(String, usize)> = model.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        let picks: Vec<usize> = if *len <= per_tensor {
            (0..*len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..*len)).collect()
        };
        for j in picks {
            let orig = model.tensors()[ti].1.data()[j];
            probe.tensors_mut()[ti].1.data_mut()[j] = orig + epsilon;
            let plus = batch_loss(&probe, &refs, prompt, sep)?;
            probe.tensors_mut()[ti].1.data_mut()[j] = orig - epsilon;
            let minus = batch_loss(&probe, &refs, prompt, sep)?;
            probe.tensors_mut()[ti].1.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.tensors()[ti].1.data()[j];
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    what: "finite difference",
                    step: 0,
                });
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.0 {
                worst = (rel, (name.clone(), j));
            }
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst: worst.1,
        checked,
    })
}
