use super::check::finite_difference_check;
use super::*;
use crate::rng::Rng;

fn tape() -> Tape<f64> {
    Tape::new()
}

// ── matmul ───────────────────────────────────────────────────────────

#[test]
fn matmul_identity_passthrough() {
    let t = tape();
    let x = t
        .leaf(vec![1.0, -2.0, 3.5, 0.25], vec![2, 2], false)
        .unwrap();
    let i2 = t.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]).unwrap();
    let y = i2.matmul(&x).unwrap();
    assert_eq!(y.values(), x.values());
}

#[test]
fn matmul_hand_arithmetic() {
    let t = tape();
    let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], false).unwrap();
    let b = t.constant(vec![1.0, 1.0], vec![2, 1]).unwrap();
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.values(), vec![3.0, 7.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let t = tape();
    let a = t.leaf(vec![0.0; 6], vec![2, 3], false).unwrap();
    let b = t.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_grad_is_column_sums_of_b() {
    // d sum(A·B)/dA[i][p] = sum_j B[p][j], independent of i.
    let mut rng = Rng::new(3);
    let b_vals: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let col_sums: Vec<f64> = (0..2).map(|p| b_vals[p * 3] + b_vals[p * 3 + 1] + b_vals[p * 3 + 2]).collect();

    let t = tape();
    let a = t.leaf(vec![0.5, -1.0, 2.0, 0.7], vec![2, 2], true).unwrap();
    let b = t.constant(b_vals.clone(), vec![2, 3]).unwrap();
    let loss = a.matmul(&b).unwrap().sum_all().unwrap();
    t.backward(&loss).unwrap();
    let g = a.grad().unwrap();
    for i in 0..2 {
        for p in 0..2 {
            assert!((g[i * 2 + p] - col_sums[p]).abs() < 1e-12);
        }
    }

    // Same statement via the finite-difference oracle.
    let out = finite_difference_check(
        |t, xt| {
            let b = t.constant(b_vals.clone(), vec![2, 3])?;
            xt.matmul(&b)?.sum_all()
        },
        &[0.5, -1.0, 2.0, 0.7],
        &[2, 2],
        1e-5,
    )
    .unwrap();
    assert!(out.max_rel_err < 1e-8);
}

// ── elementwise ──────────────────────────────────────────────────────

#[test]
fn add_zero_is_identity() {
    let t = tape();
    let x = t.leaf(vec![1.0, -2.0, 0.5], vec![3], false).unwrap();
    let z = t.constant(vec![0.0; 3], vec![3]).unwrap();
    assert_eq!(x.add(&z).unwrap().values(), x.values());
}

#[test]
fn log_exp_inverse_pair() {
    let t = tape();
    for v in [-1.0, 0.0, 2.5] {
        let x = t.leaf(vec![v], vec![1], false).unwrap();
        let y = x.exp().unwrap().log().unwrap();
        assert!((y.values()[0] - v).abs() < 1e-12, "log(exp({v}))");
    }
}

#[test]
fn broadcast_mul_scales_rows() {
    let t = tape();
    let f = t
        .leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3], false)
        .unwrap();
    let p = t.constant(vec![0.5, 0.25], vec![2]).unwrap();
    let y = f.mul(&p).unwrap();
    assert_eq!(y.values(), vec![0.5, 1.0, 1.5, 1.0, 1.25, 1.5]);
    // commuted order
    let y2 = p.mul(&f).unwrap();
    assert_eq!(y2.values(), y.values());
}

#[test]
fn broadcast_grads_match_finite_differences() {
    let mut rng = Rng::new(21);
    let m: Vec<f64> = (0..6).map(|_| rng.uniform(0.5, 2.0)).collect();
    let v: Vec<f64> = (0..2).map(|_| rng.uniform(0.5, 2.0)).collect();
    for kind in ["add", "sub", "mul", "div"] {
        let m2 = m.clone();
        let out = finite_difference_check(
            move |t, xt| {
                let mt = t.constant(m2.clone(), vec![2, 3])?;
                let r = match kind {
                    "add" => mt.add(xt)?,
                    "sub" => mt.sub(xt)?,
                    "mul" => mt.mul(xt)?,
                    _ => mt.div(xt)?,
                };
                r.mul(&r)?.sum_all()
            },
            &v,
            &[2],
            1e-6,
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-7, "{kind}: {:?}", out);
    }
}

#[test]
fn log_nonpositive_is_domain_error() {
    let t = tape();
    let x = t.leaf(vec![1.0, -0.5], vec![2], false).unwrap();
    assert!(matches!(x.log(), Err(CoreError::Domain { op: "log", .. })));
    let z = t.leaf(vec![0.0], vec![1], false).unwrap();
    assert!(z.log().is_err());
}

#[test]
fn div_by_zero_is_domain_error() {
    let t = tape();
    let x = t.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
    let z = t.constant(vec![1.0, 0.0], vec![2]).unwrap();
    assert!(matches!(x.div(&z), Err(CoreError::Domain { op: "div", .. })));
}

// ── softmax cross-entropy ────────────────────────────────────────────

#[test]
fn softmax_xent_uniform_logits_is_log_n() {
    let t = tape();
    let logits = t.leaf(vec![0.7; 16], vec![4, 4], false).unwrap();
    let loss = logits.softmax_xent_rows(&[0, 1, 2, 3]).unwrap();
    assert!((loss.value_scalar() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn softmax_xent_confident_diagonal() {
    let t = tape();
    let mut vals = vec![0.0; 16];
    for i in 0..4 {
        vals[i * 4 + i] = 10.0;
    }
    let logits = t.leaf(vals, vec![4, 4], false).unwrap();
    let loss = logits.softmax_xent_rows(&[0, 1, 2, 3]).unwrap();
    // closed form: log(1 + 3 e^-10) = 1.3618e-4
    let expected = (1.0 + 3.0 * (-10.0f64).exp()).ln();
    assert!((loss.value_scalar() - expected).abs() < 1e-14);
    assert!(loss.value_scalar() < 2e-4);
}

#[test]
fn softmax_xent_two_by_two_closed_form() {
    let t = tape();
    let logits = t.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2], false).unwrap();
    let loss = logits.softmax_xent_rows(&[0, 1]).unwrap();
    let expected = (1.0 + (-1.0f64).exp()).ln(); // 0.313261687...
    assert!((loss.value_scalar() - expected).abs() < 1e-12);
}

#[test]
fn softmax_xent_target_out_of_bounds() {
    let t = tape();
    let logits = t.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
    assert!(matches!(
        logits.softmax_xent_rows(&[0, 2]),
        Err(CoreError::IndexOutOfBounds { .. })
    ));
}

#[test]
fn softmax_xent_gradient_check() {
    let mut rng = Rng::new(8);
    let vals: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
    let out = finite_difference_check(
        |_t, xt| xt.softmax_xent_rows(&[2, 0, 1]),
        &vals,
        &[3, 4],
        1e-5,
    )
    .unwrap();
    assert!(out.max_rel_err < 1e-9, "{:?}", out);
}

#[test]
fn softmax_xent_stable_at_large_logits() {
    // τ = 0.07 pushes logits to ~14/τ ≈ 200; must not overflow.
    let t = tape();
    let logits = t
        .leaf(vec![200.0, 0.0, 0.0, 200.0], vec![2, 2], false)
        .unwrap();
    let loss = logits.softmax_xent_rows(&[0, 1]).unwrap();
    assert!(loss.value_scalar().is_finite());
    assert!(loss.value_scalar() >= 0.0);
}

// ── conv2d ───────────────────────────────────────────────────────────

#[test]
fn conv2d_one_by_one_identity() {
    let t = tape();
    let x = t
        .leaf((0..18).map(|i| i as f64).collect(), vec![2, 3, 3], false)
        .unwrap();
    let w = t.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2, 1, 1]).unwrap();
    let b = t.constant(vec![0.0, 0.0], vec![2]).unwrap();
    let y = x.conv2d(&w, &b, 1, 0).unwrap();
    assert_eq!(y.values(), x.values());
}

#[test]
fn conv2d_box_kernel_center_is_nine() {
    let t = tape();
    let x = t.leaf(vec![1.0; 16], vec![1, 4, 4], false).unwrap();
    let w = t.constant(vec![1.0; 9], vec![1, 1, 3, 3]).unwrap();
    let b = t.constant(vec![0.0], vec![1]).unwrap();
    let y = x.conv2d(&w, &b, 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4]);
    let v = y.values();
    assert_eq!(v[4 + 1], 9.0); // interior
    assert_eq!(v[0], 4.0); // corner sees a 2×2 patch
}

#[test]
fn conv2d_gradient_check() {
    let mut rng = Rng::new(17);
    let x: Vec<f64> = (0..2 * 5 * 5).map(|_| rng.normal()).collect();
    let w: Vec<f64> = (0..3 * 2 * 3 * 3).map(|_| rng.normal() * 0.3).collect();
    let b: Vec<f64> = (0..3).map(|_| rng.normal() * 0.1).collect();

    // w.r.t. input
    let (wc, bc) = (w.clone(), b.clone());
    let out = finite_difference_check(
        move |t, xt| {
            let wt = t.constant(wc.clone(), vec![3, 2, 3, 3])?;
            let bt = t.constant(bc.clone(), vec![3])?;
            xt.conv2d(&wt, &bt, 2, 1)?.tanh()?.sum_all()
        },
        &x,
        &[2, 5, 5],
        1e-5,
    )
    .unwrap();
    assert!(out.max_rel_err < 1e-4, "input grad {:?}", out);

    // w.r.t. kernel
    let xc = x.clone();
    let bc = b.clone();
    let out = finite_difference_check(
        move |t, wt| {
            let xt = t.constant(xc.clone(), vec![2, 5, 5])?;
            let bt = t.constant(bc.clone(), vec![3])?;
            xt.conv2d(wt, &bt, 1, 1)?.tanh()?.sum_all()
        },
        &w,
        &[3, 2, 3, 3],
        1e-5,
    )
    .unwrap();
    assert!(out.max_rel_err < 1e-4, "kernel grad {:?}", out);
}

#[test]
fn conv2d_too_small_output_is_shape_error() {
    let t = tape();
    let x = t.leaf(vec![1.0], vec![1, 1, 1], false).unwrap();
    let w = t.constant(vec![1.0; 9], vec![1, 1, 3, 3]).unwrap();
    let b = t.constant(vec![0.0], vec![1]).unwrap();
    assert!(matches!(
        x.conv2d(&w, &b, 1, 0),
        Err(CoreError::Shape { op: "conv2d", .. })
    ));
}

#[test]
fn conv2d_even_kernel_rejected() {
    let t = tape();
    let x = t.leaf(vec![1.0; 16], vec![1, 4, 4], false).unwrap();
    let w = t.constant(vec![1.0; 4], vec![1, 1, 2, 2]).unwrap();
    let b = t.constant(vec![0.0], vec![1]).unwrap();
    assert!(x.conv2d(&w, &b, 1, 1).is_err());
}

// ── backward ─────────────────────────────────────────────────────────

#[test]
fn backward_sum_gives_ones() {
    let t = tape();
    let x = t.leaf(vec![3.0, -1.0, 0.5], vec![3], true).unwrap();
    let loss = x.sum_all().unwrap();
    t.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn backward_sum_of_squares_gives_2x() {
    let t = tape();
    let x = t.leaf(vec![3.0, -1.0, 0.5], vec![3], true).unwrap();
    let loss = x.mul(&x).unwrap().sum_all().unwrap();
    t.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0, -2.0, 1.0]);
}

#[test]
fn backward_requires_scalar() {
    let t = tape();
    let x = t.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
    let y = x.mul(&x).unwrap();
    assert!(matches!(
        t.backward(&y),
        Err(CoreError::Shape { op: "backward", .. })
    ));
}

#[test]
fn double_backward_without_reset_errors() {
    let t = tape();
    let x = t.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
    let loss = x.sum_all().unwrap();
    t.backward(&loss).unwrap();
    assert!(matches!(t.backward(&loss), Err(CoreError::Tape(_))));
    t.reset_grads();
    t.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
}

#[test]
fn trainable_leaves_off_the_path_get_zero_grads() {
    let t = tape();
    let x = t.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
    let unused = t.leaf(vec![5.0], vec![1], true).unwrap();
    let loss = x.sum_all().unwrap();
    t.backward(&loss).unwrap();
    assert_eq!(unused.grad().unwrap(), vec![0.0]);
}

#[test]
fn backward_rules_execute_exactly_once_per_node() {
    let t = tape();
    let x = t.leaf(vec![1.0, 2.0, 3.0], vec![3], true).unwrap();
    // x -> y = x*x -> z = y + x -> loss = sum(z): 3 non-leaf nodes.
    let y = x.mul(&x).unwrap();
    let z = y.add(&x).unwrap();
    let loss = z.sum_all().unwrap();
    let report = t.backward(&loss).unwrap();
    assert_eq!(report.rules_executed, 3);
    assert_eq!(report.nodes_total, 4);
    // grad = 2x + 1
    assert_eq!(x.grad().unwrap(), vec![3.0, 5.0, 7.0]);
}

#[test]
fn mixing_tapes_is_an_error() {
    let t1 = tape();
    let t2 = tape();
    let a = t1.leaf(vec![1.0], vec![1], false).unwrap();
    let b = t2.leaf(vec![1.0], vec![1], false).unwrap();
    assert!(matches!(a.add(&b), Err(CoreError::Tape(_))));
}

// ── misc ops ─────────────────────────────────────────────────────────

#[test]
fn row_sum_and_gather_and_upsample_grads() {
    let mut rng = Rng::new(33);
    let x: Vec<f64> = (0..2 * 3 * 3).map(|_| rng.normal()).collect();
    let out = finite_difference_check(
        |_t, xt| {
            let up = xt.upsample_nearest(2)?;
            let rows = up.gather_spatial(&[0, 7, 35, 17])?;
            rows.mul(&rows)?.row_sum()?.sum_all()
        },
        &x,
        &[2, 3, 3],
        1e-5,
    )
    .unwrap();
    assert!(out.max_rel_err < 1e-8, "{:?}", out);
}

#[test]
fn sqrt_softplus_tanh_grads() {
    let mut rng = Rng::new(4);
    let x: Vec<f64> = (0..8).map(|_| rng.uniform(0.2, 2.0)).collect();
    let out = finite_difference_check(
        |_t, xt| {
            let a = xt.sqrt()?;
            let b = xt.softplus()?.tanh()?;
            a.add(&b)?.sum_all()
        },
        &x,
        &[8],
        1e-6,
    )
    .unwrap();
    assert!(out.max_rel_err < 1e-7, "{:?}", out);
}

#[test]
fn forward_is_deterministic_bitwise() {
    let run = || {
        let t = tape();
        let mut rng = Rng::new(99);
        let x: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
        let xt = t.leaf(x, vec![4, 6], false).unwrap();
        let w = t
            .constant((0..36).map(|i| (i as f64).sin()).collect(), vec![6, 6])
            .unwrap();
        let y = xt.matmul(&w).unwrap().tanh().unwrap();
        let loss = y.mul(&y).unwrap().sum_all().unwrap();
        loss.value_scalar().to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn primitive_battery_fd_under_1e4_on_100_seeds() {
    for seed in 0..100u64 {
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(0.3, 1.5)).collect();
        let out = finite_difference_check(
            |t, xt| {
                let w = t.constant(vec![0.4, -0.2, 0.9, 0.3, -0.5, 0.7], vec![3, 2])?;
                let h = xt.matmul(&w)?; // 2x2
                let s = h.tanh()?.exp()?;
                let q = s.add_scalar(0.5)?.log()?;
                q.mul(&q)?.sum_all()
            },
            &x,
            &[2, 3],
            1e-5,
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-4, "seed {seed}: {:?}", out);
    }
}

#[test]
fn f32_path_compiles_and_runs() {
    let t: Tape<f32> = Tape::new();
    let x = t.leaf(vec![1.0f32, 2.0], vec![2], true).unwrap();
    let loss = x.mul(&x).unwrap().sum_all().unwrap();
    t.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0f32, 4.0]);
}
