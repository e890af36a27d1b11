//! Reverse-mode differentiation over a small set of 2-D tensor primitives.
//!
//! The primitive set is what the force field needs: matrix products,
//! elementwise arithmetic and transcendental functions, reductions and
//! broadcasts, row gathers/scatters by edge index, row norms, and a
//! quadrature-weighted softmax built from those.
//!
//! Every backward rule is expressed with tape primitives, so a gradient is
//! itself a differentiable expression. Forces are obtained as `-dE/dx` with
//! one reverse pass, and the force-matching loss is differentiated with
//! respect to parameters by a second reverse pass over the recorded first.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Quadrature-weighted softmax attention.
///
/// For `logits` of shape `n × m`, quadrature `weights` of shape `1 × m` and
/// `values` of shape `m × d`, returns the `n × d` rows
/// `Σ_k exp(l_ik) w_k v_k / Σ_k exp(l_ik) w_k`.
///
/// Logits are shifted by their row maximum before exponentiation; the shift
/// is detached since it cancels exactly between numerator and denominator.
pub fn weighted_softmax<'t>(logits: Var<'t>, weights: Var<'t>, values: Var<'t>) -> Var<'t> {
    let tape = logits.tape();
    let l = logits.value();
    let (n, m) = l.shape();
    let row_max: Vec<f64> = (0..n)
        .map(|r| l.row_slice(r).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    let shift = tape.constant(Tensor::column(&row_max)).broadcast_cols(m);
    let kernel = (logits - shift).exp() * weights.broadcast_rows(n);
    let numer = kernel.matmul(values);
    let denom = kernel.sum_cols().broadcast_cols(values.value().cols());
    numer / denom
}
