use alloc::vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, DiffError, ParamSet, Tape, TensorId};
use crate::mat::{Mat, Scalar};

fn ln(x: f64) -> f64 {
    num_traits::Float::ln(x)
}

// --- forward values ---------------------------------------------------------

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant(Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64)).unwrap();
    let i3 = tape.constant(Mat::identity(3)).unwrap();
    let ix = tape.matmul(i3, x).unwrap();
    assert_eq!(tape.value(ix), tape.value(x));

    let a = tape.constant(Mat::from_vec(1, 2, vec![1.0, 2.0])).unwrap();
    let b = tape.constant(Mat::from_vec(2, 1, vec![3.0, 4.0])).unwrap();
    let ab = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(ab)[(0, 0)], 11.0);
}

#[test]
fn relu_and_leaky_relu_values() {
    let mut tape: Tape<f64> = Tape::new();
    let x = tape.constant(Mat::from_vec(1, 3, vec![-1.0, 2.0, -10.0])).unwrap();
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).as_slice(), &[0.0, 2.0, 0.0]);
    let l = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(l).as_slice(), &[-0.2, 2.0, -2.0]);
}

#[test]
fn softmax_uniform_hand_case_and_shift_invariance() {
    let mut tape: Tape<f64> = Tape::new();
    let u = tape.constant(Mat::from_vec(1, 4, vec![0.7; 4])).unwrap();
    let su = tape.softmax_row(u).unwrap();
    for &v in tape.value(su).as_slice() {
        assert!((v - 0.25).abs() < 1e-15);
    }

    let x = tape.constant(Mat::from_vec(1, 2, vec![0.0, ln(3.0)])).unwrap();
    let sx = tape.softmax_row(x).unwrap();
    assert!((tape.value(sx)[(0, 0)] - 0.25).abs() < 1e-12);
    assert!((tape.value(sx)[(0, 1)] - 0.75).abs() < 1e-12);

    let row = vec![0.3, -1.2, 2.0, 0.0];
    let shifted: alloc::vec::Vec<f64> = row.iter().map(|v| v + 7.5).collect();
    let a = tape.constant(Mat::from_vec(1, 4, row)).unwrap();
    let b = tape.constant(Mat::from_vec(1, 4, shifted)).unwrap();
    let sa = tape.softmax_row(a).unwrap();
    let sb = tape.softmax_row(b).unwrap();
    let mut total = 0.0;
    for (va, vb) in tape.value(sa).as_slice().iter().zip(tape.value(sb).as_slice()) {
        assert!((va - vb).abs() <= 1e-12);
        total += va;
    }
    assert!((total - 1.0).abs() <= 1e-12);
}

#[test]
fn softmax_rows_sum_to_one_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape
            .constant(Mat::from_fn(6, 9, |_, _| rng.gen_range(-30.0..30.0)))
            .unwrap();
        let s = tape.softmax_row(x).unwrap();
        for i in 0..6 {
            let sum: f64 = tape.value(s).row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn concat_shapes_match_the_model_dimensions() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.constant(Mat::zeros(62, 5)).unwrap();
    let b = tape.constant(Mat::zeros(62, 10)).unwrap();
    let c = tape.constant(Mat::zeros(62, 15)).unwrap();
    let cat = tape.concat_cols(&[a, b, c]).unwrap();
    assert_eq!(tape.value(cat).shape(), (62, 30));

    let one = tape.concat_cols(&[a]).unwrap();
    assert_eq!(tape.value(one), tape.value(a));

    let e = tape.constant(Mat::zeros(62, 30)).unwrap();
    let r7 = tape.constant(Mat::zeros(7, 30)).unwrap();
    let r2 = tape.constant(Mat::zeros(2, 30)).unwrap();
    let stack = tape.concat_rows(&[e, r7, r2]).unwrap();
    assert_eq!(tape.value(stack).shape(), (71, 30));

    let p62 = tape.constant(Mat::zeros(62, 3)).unwrap();
    let p7 = tape.constant(Mat::zeros(7, 3)).unwrap();
    let p2 = tape.constant(Mat::zeros(2, 3)).unwrap();
    let pos = tape.concat_rows(&[p62, p7, p2]).unwrap();
    assert_eq!(tape.value(pos).shape(), (71, 3));
}

#[test]
fn cross_entropy_hand_value() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.constant(Mat::from_vec(1, 2, vec![0.0, ln(3.0)])).unwrap();
    let ce = tape.cross_entropy(logits, &[1]).unwrap();
    // softmax = [0.25, 0.75]; -ln(0.75)
    assert!((tape.value(ce)[(0, 0)] + ln(0.75)).abs() < 1e-12);
}

// --- backward basics --------------------------------------------------------

#[test]
fn sum_loss_gives_unit_gradients() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let w = params.add("w", Mat::from_fn(2, 2, |i, j| (i + j) as f64 + 0.5)).unwrap();
    let mut tape = Tape::new();
    let wt = tape.param(&params, w).unwrap();
    let loss = tape.sum_all(wt).unwrap();
    tape.backward(loss, &mut params).unwrap();
    for &g in params.entry(w).grad.as_slice() {
        assert_eq!(g, 1.0);
    }
}

#[test]
fn dead_relu_region_gives_zero_gradients() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let w = params.add("w", Mat::from_fn(2, 2, |_, _| 1.5)).unwrap();
    let mut tape = Tape::new();
    let wt = tape.param(&params, w).unwrap();
    let neg = tape.scale(wt, -1.0).unwrap();
    let r = tape.relu(neg).unwrap();
    let loss = tape.sum_all(r).unwrap();
    tape.backward(loss, &mut params).unwrap();
    assert_eq!(params.entry(w).grad.max_abs(), 0.0);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let w = params.add("w", Mat::zeros(2, 2)).unwrap();
    let mut tape = Tape::new();
    let wt = tape.param(&params, w).unwrap();
    let err = tape.backward(wt, &mut params);
    assert!(matches!(err, Err(DiffError::ShapeError { op: "backward", .. })));
}

#[test]
fn backward_twice_doubles_gradients() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let w = params.add("w", Mat::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.3)).unwrap();
    let mut tape = Tape::new();
    let wt = tape.param(&params, w).unwrap();
    let sq = tape.matmul(wt, wt).unwrap();
    let loss = tape.sum_all(sq).unwrap();
    tape.backward(loss, &mut params).unwrap();
    let once = params.entry(w).grad.clone();
    tape.backward(loss, &mut params).unwrap();
    for (&twice, &single) in params.entry(w).grad.as_slice().iter().zip(once.as_slice()) {
        assert_eq!(twice, 2.0 * single);
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let w = params.add("logits", Mat::from_vec(1, 3, vec![0.2, -0.4, 1.1])).unwrap();
    let mut tape = Tape::new();
    let lt = tape.param(&params, w).unwrap();
    let loss = tape.cross_entropy(lt, &[2]).unwrap();
    tape.backward(loss, &mut params).unwrap();

    let row = [0.2, -0.4, 1.1];
    let m = 1.1f64;
    let exps: alloc::vec::Vec<f64> =
        row.iter().map(|v| num_traits::Float::exp(v - m)).collect();
    let z: f64 = exps.iter().sum();
    for j in 0..3 {
        let want = exps[j] / z - if j == 2 { 1.0 } else { 0.0 };
        assert!((params.entry(w).grad[(0, j)] - want).abs() < 1e-12);
    }
}

#[test]
fn gradients_flow_only_through_mask_survivors() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let x = params.add("x", Mat::from_fn(2, 2, |i, j| (i * 2 + j) as f64 + 1.0)).unwrap();
    let mask = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let mut tape = Tape::new();
    let xt = tape.param(&params, x).unwrap();
    let masked = tape.mul_mask(xt, mask.clone()).unwrap();
    let loss = tape.sum_all(masked).unwrap();
    tape.backward(loss, &mut params).unwrap();
    assert_eq!(params.entry(x).grad, mask);
}

#[test]
fn concat_routes_gradient_to_the_right_part() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let a = params.add("a", Mat::from_fn(2, 2, |_, _| 0.3)).unwrap();
    let b = params.add("b", Mat::from_fn(2, 3, |_, _| -0.7)).unwrap();
    let c = params.add("c", Mat::from_fn(2, 1, |_, _| 1.9)).unwrap();
    let mut tape = Tape::new();
    let (at, bt, ct) =
        (tape.param(&params, a).unwrap(), tape.param(&params, b).unwrap(), tape.param(&params, c).unwrap());
    let cat = tape.concat_cols(&[at, bt, ct]).unwrap();
    // Select only the middle part's columns (2..5).
    let mask = Mat::from_fn(2, 6, |_, j| if (2..5).contains(&j) { 1.0 } else { 0.0 });
    let masked = tape.mul_mask(cat, mask).unwrap();
    let loss = tape.sum_all(masked).unwrap();
    tape.backward(loss, &mut params).unwrap();
    assert_eq!(params.entry(a).grad.max_abs(), 0.0);
    assert_eq!(params.entry(c).grad.max_abs(), 0.0);
    for &g in params.entry(b).grad.as_slice() {
        assert_eq!(g, 1.0);
    }
}

// --- error paths ------------------------------------------------------------

#[test]
fn non_finite_values_are_rejected_at_the_producing_op() {
    let mut tape: Tape<f64> = Tape::new();
    let nan = tape.constant(Mat::from_vec(1, 1, vec![f64::NAN]));
    assert!(matches!(nan, Err(DiffError::NumericalError { op: "constant" })));

    let big = tape.constant(Mat::from_vec(1, 1, vec![1e308])).unwrap();
    let overflow = tape.scale(big, 10.0);
    assert!(matches!(overflow, Err(DiffError::NumericalError { op: "scale" })));
}

#[test]
fn shape_mismatches_are_reported_per_op() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.constant(Mat::zeros(2, 3)).unwrap();
    let b = tape.constant(Mat::zeros(2, 3)).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(DiffError::ShapeError { op: "matmul", .. })));

    let c = tape.constant(Mat::zeros(3, 3)).unwrap();
    assert!(matches!(tape.add(a, c), Err(DiffError::ShapeError { op: "add", .. })));
    assert!(matches!(
        tape.concat_cols(&[a, c]),
        Err(DiffError::ShapeError { op: "concat_cols", .. })
    ));
    let wide = tape.constant(Mat::zeros(2, 4)).unwrap();
    assert!(matches!(
        tape.concat_rows(&[a, wide]),
        Err(DiffError::ShapeError { op: "concat_rows", .. })
    ));
    assert!(matches!(
        tape.gather_rows(a, &[7]),
        Err(DiffError::ShapeError { op: "gather_rows", .. })
    ));
    assert!(matches!(
        tape.sym_normalize(a, true),
        Err(DiffError::ShapeError { op: "sym_normalize", .. })
    ));

    let logits = tape.constant(Mat::zeros(2, 3)).unwrap();
    assert!(matches!(
        tape.cross_entropy(logits, &[0, 9]),
        Err(DiffError::LabelOutOfRange { label: 9, classes: 3 })
    ));
}

// --- gradient checking ------------------------------------------------------

#[test]
fn quadratic_loss_checks_to_roundoff() {
    let mut params: ParamSet<f64> = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Magnitudes in [0.5, 1) with random sign: gradients 2p stay well away
    // from zero, so the comparison is limited only by roundoff.
    params.add(
        "p",
        Mat::from_fn(2, 2, |_, _| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.5..1.0)
        }),
    )
    .unwrap();
    let build = |tape: &mut Tape<f64>, p: &ParamSet<f64>| {
        let pt = tape.param(p, p.id_of("p").unwrap())?;
        let flat = tape.reshape(pt, 1, 4)?;
        tape.matmul_nt(flat, flat)
    };
    let report = grad_check(&mut params, 1e-5, build, build).unwrap();
    assert_eq!(report.entries_checked, 4);
    assert!(report.max_rel_error <= 1e-10, "error {}", report.max_rel_error);
}

#[test]
fn entries_on_a_kink_are_skipped_not_failed() {
    let mut params: ParamSet<f64> = ParamSet::new();
    params.add("p", Mat::zeros(1, 1)).unwrap();
    let build = |tape: &mut Tape<f64>, p: &ParamSet<f64>| {
        let pt = tape.param(p, p.id_of("p").unwrap())?;
        let r = tape.relu(pt)?;
        tape.sum_all(r)
    };
    let report = grad_check(&mut params, 1e-5, build, build).unwrap();
    assert_eq!(report.entries_checked, 0);
    assert_eq!(report.entries_skipped, 1);
}

/// Builds one computation that touches every differentiable primitive.
fn all_ops_chain<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ParamSet<F>,
) -> Result<TensorId, DiffError> {
    let n = 5;
    let p = |name: &str| params.id_of(name).expect("chain parameter");
    let a_raw = tape.param(params, p("a_raw"))?;
    let x = tape.param(params, p("x"))?;
    let w1 = tape.param(params, p("w1"))?;
    let wc = tape.param(params, p("wc"))?;
    let w4 = tape.param(params, p("w4"))?;
    let bias = tape.param(params, p("bias"))?;
    let mix = tape.param(params, p("mix"))?;

    let a_sym = tape.symmetrize(a_raw)?;
    let off_diag =
        Mat::from_fn(n, n, |i, j| if i == j { F::zero() } else { F::one() });
    let a_hollow = tape.mul_mask(a_sym, off_diag)?;
    let l1 = tape.sym_normalize(a_sym, false)?;
    let l2 = tape.sym_normalize(a_hollow, true)?;
    let h1 = tape.matmul(l1, x)?;
    let h2 = tape.matmul(l2, x)?;
    let hs = tape.add(h1, h2)?;
    let hw = tape.matmul(hs, w1)?;
    let act = tape.leaky_relu(hw, F::from_f64(0.2))?;
    let e = tape.matmul_nt(act, act)?;
    let lam = tape.row_sums(e)?;
    let alpha = tape.softmax_row(lam)?;
    let center = tape.matmul(alpha, act)?;
    let ract = tape.relu(act)?;
    let gath = tape.gather_rows(ract, &[0, 2, 2, 4])?;
    let gsum = tape.row_sums(gath)?;
    let gproj = tape.matmul(gsum, w4)?;
    let zc = tape.matmul(center, wc)?;
    let zcb = tape.add_bias_row(zc, bias)?;
    let logits = tape.concat_rows(&[zcb, gproj])?;
    let ce = tape.cross_entropy(logits, &[1, 0])?;

    let er = tape.reshape(e, 1, n * n)?;
    let ers = tape.scale_by_entry(er, mix, 0, 1)?;
    let esum = tape.sum_all(ers)?;
    let esc = tape.scale(esum, F::from_f64(0.01))?;

    let cc = tape.concat_cols(&[zcb, gproj])?;
    let ones = tape.constant(Mat::from_fn(6, 1, |_, _| F::one()))?;
    let ccs = tape.matmul(cc, ones)?;
    let ccm = tape.scale_by_entry(ccs, mix, 0, 0)?;

    let partial = tape.add(ce, esc)?;
    tape.add(partial, ccm)
}

fn chain_params(seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let add = |params: &mut ParamSet<f64>, name: &str, r: usize, c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        params.add(name, Mat::from_fn(r, c, |_, _| rng.gen_range(lo..hi))).unwrap();
    };
    add(&mut params, "a_raw", 5, 5, 0.6, 1.6, &mut rng);
    add(&mut params, "x", 5, 4, -1.0, 1.0, &mut rng);
    add(&mut params, "w1", 4, 3, -0.8, 0.8, &mut rng);
    add(&mut params, "wc", 3, 3, -0.8, 0.8, &mut rng);
    add(&mut params, "w4", 4, 3, -0.8, 0.8, &mut rng);
    add(&mut params, "bias", 1, 3, -0.5, 0.5, &mut rng);
    add(&mut params, "mix", 1, 2, 0.2, 1.0, &mut rng);
    params
}

#[test]
fn every_primitive_matches_finite_differences_across_seeds() {
    for seed in 0..20u64 {
        let mut params = chain_params(seed);
        let report =
            grad_check(&mut params, 1e-5, all_ops_chain::<f64>, all_ops_chain::<f64>).unwrap();
        assert!(report.entries_checked > 60, "seed {seed}: too few entries checked");
        assert!(
            report.max_rel_error <= 1e-6,
            "seed {seed}: max relative error {} at {:?}",
            report.max_rel_error,
            report.worst_entry
        );
    }
}

#[test]
fn single_precision_gradients_match_a_double_precision_oracle() {
    for seed in 0..5u64 {
        let mut params32: ParamSet<f32> = chain_params(seed).cast();
        let report =
            grad_check(&mut params32, 1e-5, all_ops_chain::<f32>, all_ops_chain::<f64>).unwrap();
        assert!(report.entries_checked > 60, "seed {seed}: too few entries checked");
        assert!(
            report.max_rel_error <= 1e-4,
            "seed {seed}: max relative error {} at {:?}",
            report.max_rel_error,
            report.worst_entry
        );
    }
}

#[test]
fn normalization_backward_matches_finite_differences() {
    for seed in 30..36u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: ParamSet<f64> = ParamSet::new();
        params.add("a", Mat::from_fn(6, 6, |_, _| rng.gen_range(0.4..1.4))).unwrap();
        let weights = Mat::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let build = |tape: &mut Tape<f64>, p: &ParamSet<f64>| {
            let at = tape.param(p, p.id_of("a").unwrap())?;
            let sym = tape.symmetrize(at)?;
            let l = tape.sym_normalize(sym, false)?;
            let weighted = tape.mul_mask(l, weights.clone())?;
            tape.sum_all(weighted)
        };
        let report = grad_check(&mut params, 1e-6, build, build).unwrap();
        assert!(
            report.max_rel_error <= 1e-6,
            "seed {seed}: max relative error {}",
            report.max_rel_error
        );
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut params = chain_params(99);
        let mut tape = Tape::new();
        let loss = all_ops_chain(&mut tape, &params).unwrap();
        let value = tape.value(loss)[(0, 0)];
        tape.backward(loss, &mut params).unwrap();
        let grads: alloc::vec::Vec<u64> = params
            .entries()
            .iter()
            .flat_map(|e| e.grad.as_slice().iter().map(|g| g.to_bits()))
            .collect();
        (value.to_bits(), grads)
    };
    assert_eq!(run(), run());
}
