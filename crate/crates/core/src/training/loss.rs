use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::backbone::{ModelState, ParamVars};
use crate::error::{invalid, Result};
use crate::structure::AtomicConfiguration;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub energy: f64,
    pub forces: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { energy: 1.0, forces: 100.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy >= 0.0 && self.forces >= 0.0) {
            return Err(invalid("loss weights must be non-negative"));
        }
        if self.energy == 0.0 && self.forces == 0.0 {
            return Err(invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Energy and forces of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub energy: f64,
    pub forces: Vec<Vector3<f64>>,
}

impl Labels {
    pub fn of(frame: &AtomicConfiguration) -> Result<Self> {
        match (frame.energy, &frame.forces) {
            (Some(energy), Some(forces)) => Ok(Self { energy, forces: forces.clone() }),
            _ => Err(crate::Error::Schema("frame lacks energy or forces".into())),
        }
    }
}

/// `λ_E · mean_b (ΔE_b / N_b)² + λ_F · mean over all force components of ΔF²`.
pub fn loss(pred: &[Labels], target: &[Labels], w: LossWeights) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(invalid(format!(
            "loss needs equally many predictions and targets, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let mut e_term = 0.0;
    let mut f_sum = 0.0;
    let mut n_comp = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.forces.len() != t.forces.len() || p.forces.is_empty() {
            return Err(invalid("force arrays differ in length"));
        }
        let n = p.forces.len() as f64;
        e_term += ((p.energy - t.energy) / n).powi(2);
        f_sum += p
            .forces
            .iter()
            .zip(&t.forces)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>();
        n_comp += 3 * p.forces.len();
    }
    Ok(w.energy * e_term / pred.len() as f64 + w.forces * f_sum / n_comp as f64)
}

/// One configuration's share of a batch loss, on the tape: the batch has
/// `batch` configurations and `components` force components in total.
/// Forces come from a differentiable gradient of the energy, so the result
/// can be differentiated with respect to the parameters.
pub fn frame_loss_on_tape<'t>(
    model: &ModelState,
    vars: &ParamVars<'t>,
    frame: &AtomicConfiguration,
    w: LossWeights,
    batch: usize,
    components: usize,
) -> Result<Var<'t>> {
    let labels = Labels::of(frame)?;
    let tape = vars.embedding.tape();
    let n = frame.len();
    let pos = tape.leaf(crate::backbone::positions_tensor(&frame.positions));
    let out = model.forward_on_tape(vars, &frame.species, pos)?;
    let de = out.energy.add_scalar(-labels.energy).scale(1.0 / n as f64);
    let mut total = de.square().scale(w.energy / batch as f64);
    if w.forces > 0.0 {
        let grad = tape.gradients(out.energy, &[pos])?.remove(0);
        let target = Tensor::from_fn(n, 3, |i, c| labels.forces[i][c]);
        // grad + F_ref = −(F_pred − F_ref)
        let diff = grad + tape.constant(target);
        total = total + diff.square().sum().scale(w.forces / components as f64);
    }
    Ok(total)
}
