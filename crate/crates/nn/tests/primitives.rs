use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use travgrid_nn::gradcheck::check_gradients;
use travgrid_nn::{Graph, Graph64, NnError, Tensor, Tensor64, Var};

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor64 {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.5..1.5))
}

/// Fixed random projection so every primitive is checked through a
/// non-trivial scalar.
fn readout(g: &mut Graph64, x: Var, seed: u64) -> travgrid_nn::Result<Var> {
    let (r, c) = g.value(x).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)));
    let t = g.transpose(w);
    let p = g.matmul(x, t)?;
    Ok(g.mean(p))
}

fn assert_grad(
    name: &str,
    inputs: &[Tensor64],
    f: impl Fn(&mut Graph64, &[Var]) -> travgrid_nn::Result<Var>,
) {
    let report = check_gradients(inputs, EPS, f).unwrap();
    let err = report.max_relative_error();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn matmul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ins = [rand_t(&mut rng, 3, 4), rand_t(&mut rng, 4, 5)];
    assert_grad("matmul", &ins, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        readout(g, y, 11)
    });
    assert_grad(
        "matmul_nt",
        &[rand_t(&mut rng, 3, 4), rand_t(&mut rng, 6, 4)],
        |g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            readout(g, y, 12)
        },
    );
}

#[test]
fn add_and_broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ins = [
        rand_t(&mut rng, 3, 4),
        rand_t(&mut rng, 3, 4),
        rand_t(&mut rng, 1, 4),
        rand_t(&mut rng, 1, 4),
    ];
    assert_grad("add/add_row/mul_row", &ins, |g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.add_row(a, v[2])?;
        let c = g.mul_row(b, v[3])?;
        readout(g, c, 21)
    });
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_grad("layer_norm", &[rand_t(&mut rng, 4, 6)], |g, v| {
        let y = g.layer_norm(v[0]);
        readout(g, y, 31)
    });
}

#[test]
fn softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert_grad("softmax", &[rand_t(&mut rng, 3, 5)], |g, v| {
        let y = g.softmax(v[0]);
        readout(g, y, 41)
    });
}

#[test]
fn shift_of_softmax_logits_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ins = [rand_t(&mut rng, 3, 5), rand_t(&mut rng, 1, 1)];
    let build = |g: &mut Graph64, v: &[Var]| {
        let ones = g.constant(Tensor::full(1, 5, 1.0));
        let shift = g.matmul(v[1], ones)?;
        let x = g.add_row(v[0], shift)?;
        let y = g.softmax(x);
        readout(g, y, 42)
    };
    let mut g = Graph::new();
    let v: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &v).unwrap();
    let grad = g.backward(out).unwrap().take(v[1]).unwrap().item();
    assert!(grad.abs() < 1e-12, "{grad}");
    assert_grad("softmax shift", &ins, build);
}

#[test]
fn gelu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert_grad("gelu", &[rand_t(&mut rng, 3, 5)], |g, v| {
        let y = g.gelu(v[0]);
        readout(g, y, 51)
    });
}

#[test]
fn transpose_concat_slice_scale_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ins = [rand_t(&mut rng, 3, 2), rand_t(&mut rng, 3, 4)];
    assert_grad("transpose/concat/slice/scale", &ins, |g, v| {
        let c = g.concat_cols(&[v[0], v[1]])?;
        let s = g.slice_cols(c, 1, 4)?;
        let t = g.transpose(s);
        let k = g.scale(t, 0.37);
        readout(g, k, 61)
    });
}

#[test]
fn l2_normalize_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    assert_grad("l2_normalize", &[rand_t(&mut rng, 4, 5)], |g, v| {
        let y = g.l2_normalize(v[0]);
        readout(g, y, 71)
    });
}

#[test]
fn loss_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let targets = Tensor::from_vec(2, 3, vec![0.2, 0.5, 0.3, 1.0, 0.0, 0.0]).unwrap();
    assert_grad(
        "soft_cross_entropy",
        &[rand_t(&mut rng, 2, 3)],
        move |g, v| {
            let p = g.softmax(v[0]);
            g.soft_cross_entropy(p, targets.clone())
        },
    );
    let mask = vec![
        true, false, true, false, false, false, false, true, false, true, true, false,
    ];
    assert_grad("masked_nll", &[rand_t(&mut rng, 3, 4)], move |g, v| {
        g.masked_nll(v[0], mask.clone())
    });
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(1, 4));
    let y = g.softmax(x);
    assert_eq!(g.value(y).data(), &[0.25; 4]);
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(2, 7, 3.5));
    let y = g.layer_norm(x);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    let err = g.matmul(a, b).unwrap_err();
    match err {
        NnError::ShapeMismatch { lhs, rhs, .. } => {
            assert_eq!(lhs, (2, 3));
            assert_eq!(rhs, (2, 3));
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.constant(Tensor::zeros(3, 2));
    assert!(err_text(g.add(a, c)).contains("(3, 2)"));
}

fn err_text(r: travgrid_nn::Result<Var>) -> String {
    r.unwrap_err().to_string()
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let w = g.param(Tensor::full(2, 2, 1.0));
    let c = g.constant(Tensor::full(2, 2, 2.0));
    let y = g.matmul(w, c).unwrap();
    let l = g.mean(y);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(w).is_some());
    assert!(grads.get(c).is_none());
}

#[test]
fn masked_nll_empty_positive_set_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::row_vector(vec![0.3, -0.2, 1.0]));
    let l = g.masked_nll(x, vec![false; 3]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
}
