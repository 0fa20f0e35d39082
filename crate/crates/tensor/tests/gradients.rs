use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tooluse_tensor::{grad_check, Tape, Tensor, Var};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Contract with fixed random weights so every output coordinate matters.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, shape[0], shape[1]));
    let y = tape.mul(x, w).unwrap();
    tape.sum(y)
}

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-6;

#[test]
fn quadratic_form_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 4, 4);
    let x = random(&mut rng, 4, 1);
    let report = grad_check(
        |t, v| {
            let xt = t.transpose(v[1]);
            let ax = t.matmul(v[0], v[1])?;
            let q = t.matmul(xt, ax)?;
            Ok(t.sum(q))
        },
        &[a, x],
        H,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn constant_function_has_exact_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(tooluse_tensor::ParamId(0), &Tensor::row(vec![0.3, -0.7]));
    let z = tape.scale(x, 0.0);
    let s = tape.sum(z);
    let g = tape.backward(s).unwrap();
    assert!(g.get(tooluse_tensor::ParamId(0)).unwrap().data().iter().all(|&v| v == 0.0));

    let report = grad_check(|t, v| Ok(t.scale(v[0], 0.0)).map(|z| t.sum(z)), &[Tensor::row(vec![1.0, 2.0])], H).unwrap();
    assert_eq!(report.max_abs_error, 0.0);
}

#[test]
fn every_differentiable_op_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, 3, 4);
    let b = random(&mut rng, 4, 2);
    let c = random(&mut rng, 3, 4);
    let bias = random(&mut rng, 1, 4);
    let row = random(&mut rng, 1, 5);

    type Case = (&'static str, Box<dyn Fn(&mut Tape, &[Var]) -> tooluse_tensor::Result<Var>>, Vec<Tensor>);
    let cases: Vec<Case> = vec![
        ("matmul", Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; Ok(weighted_sum(t, y, 11)) }), vec![a.clone(), b.clone()]),
        ("add", Box::new(|t, v| { let y = t.add(v[0], v[1])?; Ok(weighted_sum(t, y, 12)) }), vec![a.clone(), c.clone()]),
        ("add_row", Box::new(|t, v| { let y = t.add(v[0], v[1])?; Ok(weighted_sum(t, y, 13)) }), vec![a.clone(), bias.clone()]),
        ("sub", Box::new(|t, v| { let y = t.sub(v[0], v[1])?; Ok(weighted_sum(t, y, 14)) }), vec![a.clone(), c.clone()]),
        ("mul", Box::new(|t, v| { let y = t.mul(v[0], v[1])?; Ok(weighted_sum(t, y, 15)) }), vec![a.clone(), c.clone()]),
        ("scale", Box::new(|t, v| { let y = t.scale(v[0], -2.5); Ok(weighted_sum(t, y, 16)) }), vec![a.clone()]),
        ("one_minus", Box::new(|t, v| { let y = t.one_minus(v[0]); Ok(weighted_sum(t, y, 17)) }), vec![a.clone()]),
        ("concat", Box::new(|t, v| { let y = t.concat_cols(&[v[0], v[1]])?; Ok(weighted_sum(t, y, 18)) }), vec![a.clone(), c.clone()]),
        ("broadcast_rows", Box::new(|t, v| { let y = t.broadcast_rows(v[0], 3)?; Ok(weighted_sum(t, y, 19)) }), vec![bias.clone()]),
        ("transpose", Box::new(|t, v| { let y = t.transpose(v[0]); Ok(weighted_sum(t, y, 20)) }), vec![a.clone()]),
        ("tanh", Box::new(|t, v| { let y = t.tanh(v[0]); Ok(weighted_sum(t, y, 21)) }), vec![a.clone()]),
        ("sigmoid", Box::new(|t, v| { let y = t.sigmoid(v[0]); Ok(weighted_sum(t, y, 22)) }), vec![a.clone()]),
        ("prelu", Box::new(|t, v| { let y = t.prelu(v[0], 0.25); Ok(weighted_sum(t, y, 23)) }), vec![a.clone()]),
        ("softmax", Box::new(|t, v| { let y = t.softmax(v[0]); Ok(weighted_sum(t, y, 24)) }), vec![row.clone()]),
        ("mean", Box::new(|t, v| { let y = t.tanh(v[0]); Ok(t.mean(y)) }), vec![a.clone()]),
        ("bce", Box::new(|t, v| { let p = t.sigmoid(v[0]); t.bce(p, &[1.0, 0.0, 1.0, 0.0, 1.0], &[1.0, 2.0, 0.5, 1.0, 3.0]) }), vec![row.clone()]),
    ];
    for (name, f, point) in cases {
        let report = grad_check(f, &point, H).unwrap();
        println!("{name:>14}: max rel err {:.3e}", report.max_rel_error);
        assert!(report.max_rel_error < OP_TOL, "{name}: {report:?}");
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 5, 6);
    let b = random(&mut rng, 6, 3);
    let run = || {
        let mut t = Tape::new();
        let x = t.constant(a.clone());
        let y = t.constant(b.clone());
        let z = t.matmul(x, y).unwrap();
        let s = t.softmax(z);
        t.value(s).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(values in proptest::collection::vec(-30.0f64..30.0, 1..40)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(values));
        let y = t.softmax(x);
        let s: f64 = t.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(t.value(y).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn sigmoid_stays_in_unit_interval(values in proptest::collection::vec(-800.0f64..800.0, 1..20)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(values));
        let y = t.sigmoid(x);
        prop_assert!(t.value(y).data().iter().all(|&p| (0.0..=1.0).contains(&p) && p.is_finite()));
    }
}
