use super::*;
use crate::field::{field_features, grid_field};
use crate::geometry::{neighbor_list, RigidMotion};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn cfg(width: usize, heads: usize) -> AttentionConfig {
    AttentionConfig {
        width,
        heads,
        ..AttentionConfig::default()
    }
}

fn random_tensor(rng: &mut StdRng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_params(rng: &mut StdRng, cfg: &AttentionConfig, node_dim: usize) -> AttentionParams {
    let mut p = AttentionParams::init(cfg, node_dim, rng);
    p.gate_weight = random_tensor(rng, 1, cfg.width);
    p.gate_bias = Tensor::scalar(rng.gen_range(-0.5..0.5));
    p.positional = random_tensor(rng, cfg.n_theta * cfg.n_phi, cfg.width).map(|x| 0.3 * x);
    p
}

fn naive_matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum())
        .collect()
}

/// Direct evaluation of Σ_k e^{l_mk} ω_k v_k / Σ_k e^{l_mk} ω_k, one head.
fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor, w: &[f64]) -> Tensor {
    let (n, d) = q.shape();
    let mut out = Tensor::zeros(n, d);
    for m in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| (0..d).map(|c| q.get(m, c) * k.get(j, c)).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let kern: Vec<f64> = logits.iter().zip(w).map(|(l, w)| l.exp() * w).collect();
        let z: f64 = kern.iter().sum();
        for c in 0..d {
            let s: f64 = (0..n).map(|j| kern[j] * v.get(j, c)).sum();
            out.set(m, c, s / z);
        }
    }
    out
}

#[test]
fn zero_weights_give_zero_fields() {
    let c = cfg(4, 1);
    let p = AttentionParams::zeros(&c, 3);
    let feats = Tensor::filled(32, 1, 0.7);
    let af = build_qkv(&[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.0], &feats, &p, true).unwrap();
    for t in [&af.q, &af.k, &af.v] {
        assert!(t.data().iter().all(|&x| x == 0.0));
        assert_eq!(t.shape(), (32, 4));
    }
}

#[test]
fn field_projection_embeds_feature() {
    let c = AttentionConfig {
        field_mode: FieldMode::Rbf(2),
        ..cfg(4, 1)
    };
    let mut p = AttentionParams::zeros(&c, 3);
    p.q_field = Tensor::from_fn(4, 2, |r, col| if r == col { 1.0 } else { 0.0 });
    let mut rng = StdRng::seed_from_u64(1);
    let feats = random_tensor(&mut rng, 32, 2);
    let af = build_qkv(&[0.0; 3], &[0.0; 3], &feats, &p, false).unwrap();
    for k in 0..32 {
        assert_eq!(af.q.row_slice(k), &[feats.get(k, 0), feats.get(k, 1), 0.0, 0.0]);
    }
}

#[test]
fn qkv_matches_matvec_oracle() {
    let mut rng = StdRng::seed_from_u64(2);
    let c = AttentionConfig {
        field_mode: FieldMode::Rbf(3),
        ..cfg(6, 2)
    };
    let p = random_params(&mut rng, &c, 5);
    let hi: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let hj: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let feats = random_tensor(&mut rng, 32, 3);
    let af = build_qkv(&hi, &hj, &feats, &p, true).unwrap();
    for (got, w_h, w_f, h) in [
        (&af.q, &p.q_node, &p.q_field, &hi),
        (&af.k, &p.k_node, &p.k_field, &hj),
        (&af.v, &p.v_node, &p.v_field, &hj),
    ] {
        let a = naive_matvec(w_h, h);
        for k in 0..32 {
            let b = naive_matvec(w_f, feats.row_slice(k));
            for col in 0..6 {
                let want = a[col] + b[col] + p.positional.get(k, col);
                assert!((got.get(k, col) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn qkv_rejects_bad_dimensions() {
    let c = cfg(4, 1);
    let p = AttentionParams::zeros(&c, 3);
    let feats = Tensor::zeros(32, 1);
    assert!(build_qkv(&[0.0; 2], &[0.0; 3], &feats, &p, true).is_err());
    assert!(build_qkv(&[0.0; 3], &[0.0; 3], &Tensor::zeros(32, 2), &p, true).is_err());
    assert!(build_qkv(&[0.0; 3], &[0.0; 3], &Tensor::zeros(31, 1), &p, true).is_err());
    assert!(build_qkv(&[0.0; 3], &[0.0; 3], &Tensor::zeros(31, 1), &p, false).is_ok());
}

#[test]
fn constant_values_pass_through() {
    let mut rng = StdRng::seed_from_u64(3);
    let grid = SphericalGrid::equiangular(4, 8).unwrap();
    let row: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let af = AttentionField {
        q: random_tensor(&mut rng, 32, 5),
        k: random_tensor(&mut rng, 32, 5),
        v: Tensor::from_fn(32, 5, |_, c| row[c]),
    };
    let out = spherical_attention(&af, &grid, 1).unwrap();
    for m in 0..32 {
        for c in 0..5 {
            assert!((out.get(m, c) - row[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_queries_give_quadrature_mean() {
    let mut rng = StdRng::seed_from_u64(4);
    let grid = SphericalGrid::equiangular(4, 8).unwrap();
    let af = AttentionField {
        q: Tensor::zeros(32, 3),
        k: random_tensor(&mut rng, 32, 3),
        v: random_tensor(&mut rng, 32, 3),
    };
    let out = spherical_attention(&af, &grid, 1).unwrap();
    let w = grid.weights();
    let total: f64 = w.iter().sum();
    for c in 0..3 {
        let mean: f64 = (0..32).map(|k| w[k] * af.v.get(k, c)).sum::<f64>() / total;
        for m in 0..32 {
            assert!((out.get(m, c) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn two_by_two_matches_direct_softmax() {
    let grid = SphericalGrid::equiangular(2, 2).unwrap();
    let q = Tensor::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.3, -0.2]);
    let k = Tensor::from_vec(4, 2, vec![0.5, 0.5, -1.0, 2.0, 0.0, 0.0, 1.5, -0.5]);
    let v = Tensor::from_vec(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let af = AttentionField {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
    };
    let out = spherical_attention(&af, &grid, 1).unwrap();
    let want = naive_attention(&q, &k, &v, grid.weights());
    for (a, b) in out.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn heads_attend_independently() {
    let mut rng = StdRng::seed_from_u64(5);
    let grid = SphericalGrid::equiangular(3, 4).unwrap();
    let (q, k, v) = (
        random_tensor(&mut rng, 12, 6),
        random_tensor(&mut rng, 12, 6),
        random_tensor(&mut rng, 12, 6),
    );
    let out = spherical_attention(
        &AttentionField {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
        },
        &grid,
        3,
    )
    .unwrap();
    let cols = |t: &Tensor, a: usize| Tensor::from_fn(12, 2, |r, c| t.get(r, a + c));
    for h in 0..3 {
        let want = naive_attention(&cols(&q, 2 * h), &cols(&k, 2 * h), &cols(&v, 2 * h), grid.weights());
        for r in 0..12 {
            for c in 0..2 {
                assert!((out.get(r, 2 * h + c) - want.get(r, c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn overflowing_logits_are_reported() {
    let grid = SphericalGrid::equiangular(2, 2).unwrap();
    let af = AttentionField {
        q: Tensor::filled(4, 1, 1e200),
        k: Tensor::filled(4, 1, 1e200),
        v: Tensor::zeros(4, 1),
    };
    assert!(matches!(
        spherical_attention(&af, &grid, 1),
        Err(Error::NumericalOverflow(_))
    ));
}

#[test]
fn large_but_finite_logits_stay_finite() {
    let grid = SphericalGrid::equiangular(2, 2).unwrap();
    let af = AttentionField {
        q: Tensor::from_vec(4, 1, vec![30.0, -30.0, 25.0, 0.0]),
        k: Tensor::from_vec(4, 1, vec![40.0, 1.0, -40.0, 2.0]),
        v: Tensor::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]),
    };
    let out = spherical_attention(&af, &grid, 1).unwrap();
    assert!(out.is_finite());
}

#[test]
fn gate_identities() {
    let c = cfg(4, 1);
    let grid = c.grid().unwrap();
    let mut p = AttentionParams::zeros(&c, 2);
    let out = Tensor::filled(32, 4, 3.0);
    assert_eq!(pool_and_gate(&out, &grid, &p, GateActivation::Logistic).unwrap(), 0.5);
    assert_eq!(pool_and_gate(&out, &grid, &p, GateActivation::Sinusoidal).unwrap(), 0.5);
    p.gate_bias = Tensor::scalar(20.0);
    assert!(pool_and_gate(&out, &grid, &p, GateActivation::Logistic).unwrap() > 0.999);
    assert!(pool_and_gate(&Tensor::zeros(31, 4), &grid, &p, GateActivation::Logistic).is_err());
}

#[test]
fn gate_matches_dot_product_oracle() {
    let mut rng = StdRng::seed_from_u64(6);
    let c = cfg(8, 1);
    let grid = c.grid().unwrap();
    for _ in 0..20 {
        let mut p = AttentionParams::zeros(&c, 2);
        p.gate_weight = random_tensor(&mut rng, 1, 8);
        p.gate_bias = Tensor::scalar(rng.gen_range(-1.0..1.0));
        let out = random_tensor(&mut rng, 32, 8);
        let pooled = pool(&out, &grid).unwrap();
        let z: f64 = (0..8).map(|c| pooled.get(0, c) * p.gate_weight.get(0, c)).sum::<f64>()
            + p.gate_bias.item();
        let logistic = pool_and_gate(&out, &grid, &p, GateActivation::Logistic).unwrap();
        assert!((logistic - 1.0 / (1.0 + (-z).exp())).abs() < 1e-14);
        let sinus = pool_and_gate(&out, &grid, &p, GateActivation::Sinusoidal).unwrap();
        assert!((sinus - 0.5 * (1.0 + z.sin())).abs() < 1e-14);
        let mean: Vec<f64> = (0..8)
            .map(|c| (0..32).map(|k| grid.weights()[k] * out.get(k, c)).sum::<f64>() / (4.0 * PI))
            .collect();
        for c in 0..8 {
            assert!((pooled.get(0, c) - mean[c]).abs() < 1e-14);
        }
    }
}

#[test]
fn activation_parsing() {
    assert_eq!("logistic".parse::<GateActivation>().unwrap(), GateActivation::Logistic);
    assert_eq!("sinusoidal".parse::<GateActivation>().unwrap(), GateActivation::Sinusoidal);
    assert!("relu".parse::<GateActivation>().is_err());
}

#[test]
fn config_validation() {
    assert!(cfg(6, 4).validate().is_err());
    assert!(cfg(0, 1).validate().is_err());
    assert!(cfg(8, 4).validate().is_ok());
}

fn cloud(rng: &mut StdRng, n: usize) -> Vec<Vector3<f64>> {
    loop {
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.5..1.5)))
            .collect();
        let ok = (0..n).all(|i| (0..i).all(|j| (pts[i] - pts[j]).norm() > 0.5));
        if ok {
            return pts;
        }
    }
}

#[test]
fn single_edge_with_zero_gate_is_neutral() {
    let c = cfg(4, 1);
    let mut rng = StdRng::seed_from_u64(7);
    let mut p = AttentionParams::init(&c, 3, &mut rng);
    p.gate_weight = Tensor::zeros(1, 4);
    let pts = [Vector3::zeros(), Vector3::new(1.2, 0.0, 0.3)];
    let nl = NeighborList::build(&pts, 5.0).unwrap();
    let feats = random_tensor(&mut rng, 2, 3);
    let g = edge_gates(&pts, &feats, &nl, &c, &p).unwrap();
    assert_eq!(g, vec![0.5, 0.5]);
}

#[test]
fn symmetric_dimer_has_symmetric_gates() {
    // Inverting the grid maps it onto itself for even n_phi, so with the
    // positional term off the two directions see mirrored fields.
    let c = AttentionConfig {
        positional_encoding: false,
        ..cfg(8, 2)
    };
    let mut rng = StdRng::seed_from_u64(8);
    let p = random_params(&mut rng, &c, 3);
    let pts = [Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.9, -0.4, 1.1)];
    let nl = NeighborList::build(&pts, 5.0).unwrap();
    let row = [0.3, -0.7, 1.1];
    let feats = Tensor::from_fn(2, 3, |_, c| row[c]);
    let g = edge_gates(&pts, &feats, &nl, &c, &p).unwrap();
    assert!((g[0] - g[1]).abs() < 1e-12);
}

#[test]
fn batched_gates_match_single_edge_pipeline() {
    let mut rng = StdRng::seed_from_u64(9);
    for (mode, heads) in [(FieldMode::Scalar, 1), (FieldMode::Rbf(3), 2)] {
        let c = AttentionConfig {
            field_mode: mode,
            ..cfg(6, heads)
        };
        let grid = c.grid().unwrap();
        let p = random_params(&mut rng, &c, 4);
        let pts = cloud(&mut rng, 4);
        let feats = random_tensor(&mut rng, 4, 4);
        let nl = neighbor_list(&pts, 5.0).unwrap();
        let batched = edge_gates(&pts, &feats, &nl, &c, &p).unwrap();
        assert_eq!(batched.len(), 12);
        for (e, &(i, j)) in nl.edges().iter().enumerate() {
            let field = grid_field(&pts[i], &pts[j], &grid).unwrap();
            let ff = field_features(&field, mode);
            let af = build_qkv(feats.row_slice(i), feats.row_slice(j), &ff, &p, true).unwrap();
            let out = spherical_attention(&af, &grid, heads).unwrap();
            let alpha = pool_and_gate(&out, &grid, &p, c.gate_activation).unwrap();
            assert!((alpha - batched[e]).abs() < 1e-12, "edge {e}");
        }
    }
}

#[test]
fn gates_are_translation_invariant() {
    let mut rng = StdRng::seed_from_u64(10);
    let c = cfg(8, 1);
    let p = random_params(&mut rng, &c, 3);
    for _ in 0..10 {
        let pts = cloud(&mut rng, 5);
        let feats = random_tensor(&mut rng, 5, 3);
        let nl = neighbor_list(&pts, 5.0).unwrap();
        let g0 = edge_gates(&pts, &feats, &nl, &c, &p).unwrap();
        let m = RigidMotion::translation(Vector3::from_fn(|_, _| rng.gen_range(-20.0..20.0)));
        let g1 = edge_gates(&m.apply(&pts), &feats, &nl, &c, &p).unwrap();
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn positional_embeddings_ignored_when_disabled() {
    let mut rng = StdRng::seed_from_u64(11);
    let c = AttentionConfig {
        positional_encoding: false,
        ..cfg(8, 1)
    };
    let p = random_params(&mut rng, &c, 3);
    let mut q = p.clone();
    q.positional = random_tensor(&mut rng, 32, 8).map(|x| 100.0 * x);
    let pts = cloud(&mut rng, 4);
    let feats = random_tensor(&mut rng, 4, 3);
    let nl = neighbor_list(&pts, 5.0).unwrap();
    let a = edge_gates(&pts, &feats, &nl, &c, &p).unwrap();
    let b = edge_gates(&pts, &feats, &nl, &c, &q).unwrap();
    assert_eq!(a, b);
}

#[test]
fn coincident_atoms_propagate() {
    let c = cfg(4, 1);
    let p = AttentionParams::zeros(&c, 1);
    let pts = [Vector3::zeros(), Vector3::zeros()];
    let nl = NeighborList::build(&[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)], 5.0).unwrap();
    let err = edge_gates(&pts, &Tensor::zeros(2, 1), &nl, &c, &p).unwrap_err();
    assert!(matches!(err, Error::DegenerateGeometry(_)));
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = StdRng::seed_from_u64(12);
    let c = AttentionConfig {
        field_mode: FieldMode::Rbf(2),
        ..cfg(4, 2)
    };
    let grid = c.grid().unwrap();
    let p = random_params(&mut rng, &c, 3);
    let pts = cloud(&mut rng, 3);
    let feats = random_tensor(&mut rng, 3, 3);
    let nl = neighbor_list(&pts, 5.0).unwrap();
    let coeffs: Vec<f64> = (0..nl.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |p: &AttentionParams| -> f64 {
        let g = edge_gates(&pts, &feats, &nl, &c, p).unwrap();
        g.iter().zip(&coeffs).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let vars = AttentionVars::leaves(&tape, &p);
    let (rel, dist) = edge_geometry(&tape, &pts, nl.edges()).unwrap();
    let out = edge_gates_on_tape(
        &c,
        &grid,
        &vars,
        tape.constant(feats.clone()),
        rel,
        dist,
        &nl.receivers(),
        &nl.senders(),
    )
    .unwrap();
    let l = (out.alpha * tape.constant(Tensor::column(&coeffs))).sum();
    let leaves: Vec<Var> = vars.named().iter().map(|(_, v)| *v).collect();
    let grads = tape.grad(l, &leaves).unwrap();

    let h = 1e-5;
    let (mut ok, mut total) = (0, 0);
    for (slot, (name, _)) in p.named().iter().enumerate() {
        let n = grads[slot].len();
        for idx in 0..n {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.named_mut()[slot].1.data_mut()[idx] += h;
            minus.named_mut()[slot].1.data_mut()[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads[slot].data()[idx];
            total += 1;
            if (an - fd).abs() <= 1e-5 * fd.abs().max(1e-3) {
                ok += 1;
            } else {
                eprintln!("{name}[{idx}]: analytic {an} fd {fd}");
            }
        }
    }
    assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
}

proptest! {
    #[test]
    fn outputs_stay_within_value_range(seed in 0u64..10_000, heads in 1usize..3) {
        let mut rng = StdRng::seed_from_u64(seed);
        let grid = SphericalGrid::equiangular(4, 8).unwrap();
        let d = 4;
        let af = AttentionField {
            q: random_tensor(&mut rng, 32, d).map(|x| 3.0 * x),
            k: random_tensor(&mut rng, 32, d).map(|x| 3.0 * x),
            v: random_tensor(&mut rng, 32, d),
        };
        let out = spherical_attention(&af, &grid, heads).unwrap();
        for c in 0..d {
            let col: Vec<f64> = (0..32).map(|k| af.v.get(k, c)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for m in 0..32 {
                prop_assert!(out.get(m, c) >= lo - 1e-12 && out.get(m, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn logistic_gates_in_open_interval(seed in 0u64..10_000) {
        let mut rng = StdRng::seed_from_u64(seed);
        let c = cfg(4, 1);
        let p = random_params(&mut rng, &c, 2);
        let pts = cloud(&mut rng, 3);
        let feats = random_tensor(&mut rng, 3, 2);
        let nl = neighbor_list(&pts, 5.0).unwrap();
        for a in edge_gates(&pts, &feats, &nl, &c, &p).unwrap() {
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }
}
