use amr_core::autodiff::{conv1d_out_len, grad_check, Graph, Tensor, Var};
use amr_core::rng::stream;
use amr_core::{Error, Result, Tensor64};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor64 {
    let mut rng = stream(seed);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Weighted sum so every output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let w = g.constant(random(g.shape(v).to_vec().as_slice(), seed ^ 0xABCD));
    let p = g.mul(v, w)?;
    g.sum(p)
}

fn check<F>(name: &str, inputs: &[Tensor64], mut f: F)
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(
        |g, vs| {
            let out = f(g, vs)?;
            weighted_sum(g, out, 99)
        },
        inputs,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{name}: max rel err {:e}", report.max_rel_err);
}

const SHAPES: [&[usize]; 5] = [&[3, 4], &[2, 3, 5], &[1, 6], &[4, 2, 2], &[2, 2, 3, 2]];

#[test]
fn elementwise_primitives_pass_gradient_check() {
    for (i, s) in SHAPES.iter().enumerate() {
        let x = random(s, i as u64);
        let y = random(s, 100 + i as u64);
        check("add", &[x.clone(), y.clone()], |g, v| g.add(v[0], v[1]));
        check("mul", &[x.clone(), y.clone()], |g, v| g.mul(v[0], v[1]));
        check("sigmoid", &[x.clone()], |g, v| g.sigmoid(v[0]));
        check("tanh", &[x.clone()], |g, v| g.tanh(v[0]));
        check("scale", &[x.clone()], |g, v| g.scale(v[0], -1.7));
        check("relu", &[x.clone()], |g, v| g.relu(v[0]));
        let last = s.len() - 1;
        check("softmax", &[x.clone()], |g, v| g.softmax(v[0], last));
        check("softmax0", &[x.clone()], |g, v| g.softmax(v[0], 0));
        check("layer_norm", &[x.clone()], |g, v| g.layer_norm(v[0], last, 1e-5));
        check("mean", &[x.clone()], |g, v| g.mean(v[0], 0));
        check("transpose", &[x.clone()], |g, v| g.transpose(v[0], 0, last));
        check("slice", &[x.clone()], |g, v| g.slice(v[0], last, 1, s[last]));
        check("concat", &[x.clone(), y.clone()], |g, v| g.concat(&[v[0], v[1]], last));
        let n: usize = s.iter().product();
        check("reshape", &[x.clone()], |g, v| g.reshape(v[0], &[n]));
        let mut rng = stream(i as u64);
        check("dropout", &[x.clone()], |g, v| {
            let mut r = rng.clone();
            g.dropout(v[0], 0.3, true, &mut r)
        });
        let _ = rng.random::<u8>();
    }
}

#[test]
fn broadcasting_primitives_pass_gradient_check() {
    for seed in 0..5u64 {
        let x = random(&[2, 3, 4], seed);
        check("add-bias", &[x.clone(), random(&[4], seed + 10)], |g, v| g.add(v[0], v[1]));
        check("embedding_add", &[x.clone(), random(&[3, 4], seed + 20)], |g, v| g.embedding_add(v[0], v[1]));
        check("mul-channel", &[x.clone(), random(&[2, 1, 4], seed + 30)], |g, v| g.mul(v[0], v[1]));
        check("mul-col", &[x.clone(), random(&[2, 3, 1], seed + 40)], |g, v| g.mul(v[0], v[1]));
    }
}

#[test]
fn matmul_and_conv_pass_gradient_check() {
    let cases: [(&[usize], &[usize]); 5] = [
        (&[3, 4], &[4, 2]),
        (&[2, 3, 4], &[4, 5]),
        (&[2, 3, 4], &[2, 4, 3]),
        (&[2, 2, 3, 2], &[2, 2, 2, 3]),
        (&[1, 1], &[1, 1]),
    ];
    for (i, (sa, sb)) in cases.iter().enumerate() {
        check("matmul", &[random(sa, i as u64), random(sb, 50 + i as u64)], |g, v| g.matmul(v[0], v[1]));
    }
    let convs = [(2, 9, 2, 3, 4, 2, 1), (1, 8, 3, 2, 4, 2, 1), (2, 5, 1, 1, 3, 1, 1), (1, 7, 2, 4, 2, 3, 0), (3, 4, 2, 2, 1, 1, 0)];
    for (i, &(b, l, cin, cout, k, stride, pad)) in convs.iter().enumerate() {
        let x = random(&[b, l, cin], i as u64);
        let w = random(&[cout, cin, k], 20 + i as u64);
        let bias = random(&[cout], 40 + i as u64);
        check("conv1d", &[x, w, bias], |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, pad));
    }
}

#[test]
fn shared_left_matmul_passes_gradient_check() {
    let cases: [(&[usize], &[usize]); 5] = [
        (&[2, 3], &[3, 4]),
        (&[3, 3], &[2, 3, 5]),
        (&[1, 2], &[2, 2, 2, 1]),
        (&[4, 2], &[3, 2, 2]),
        (&[2, 2], &[1, 2, 17]),
    ];
    for (i, (sw, sx)) in cases.iter().enumerate() {
        check("matmul_left", &[random(sw, i as u64), random(sx, 70 + i as u64)], |g, v| g.matmul_left(v[0], v[1]));
    }
}

#[test]
fn lstm_cell_passes_gradient_check() {
    for (i, &(rows, h)) in [(1, 1), (2, 3), (3, 2), (1, 5), (4, 1)].iter().enumerate() {
        let z = random(&[rows, 4 * h], i as u64);
        let c = random(&[rows, h], 10 + i as u64);
        check("lstm_cell", &[z.clone(), c], |g, v| g.lstm_cell(v[0], Some(v[1])));
        check("lstm_cell-first", &[z], |g, v| g.lstm_cell(v[0], None));
    }
}

#[test]
fn lstm_cell_matches_gate_equations() {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let z = [0.5, -1.0, 0.3, 2.0];
    let mut g = Graph::<f64>::new();
    let zv = g.constant(Tensor::new(&[1, 4], z.to_vec()).unwrap());
    let cv = g.constant(Tensor::new(&[1, 1], vec![0.7]).unwrap());
    let out = g.lstm_cell(zv, Some(cv)).unwrap();
    let c = sig(-1.0) * 0.7 + sig(0.5) * 0.3f64.tanh();
    let h = sig(2.0) * c.tanh();
    let got = g.value(out).data();
    assert!((got[0] - h).abs() < 1e-15 && (got[1] - c).abs() < 1e-15, "{got:?}");
}

#[test]
fn cross_entropy_passes_gradient_check() {
    for seed in 0..5u64 {
        let logits = random(&[4, 3], seed);
        let labels = [0usize, 2, 1, 2];
        let r = grad_check(|g, v| g.cross_entropy(v[0], &labels), &[logits], 1e-5, 1e-4).unwrap();
        assert!(r.passed(), "{}", r.max_rel_err);
    }
}

#[test]
fn gradient_check_examples() {
    // ||x||^2
    let r = grad_check(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        },
        &[random(&[7], 3)],
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_err);
    // softmax, pick index 0
    let r = grad_check(
        |g, v| {
            let s = g.softmax(v[0], 0)?;
            let p = g.slice(s, 0, 0, 1)?;
            g.sum(p)
        },
        &[random(&[5], 4)],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed());
    // layer norm, then weighted sum (a plain sum of a normalized vector is identically zero)
    let r = grad_check(
        |g, v| {
            let y = g.layer_norm(v[0], 1, 1e-5)?;
            weighted_sum(g, y, 1)
        },
        &[random(&[3, 6], 5)],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed());
}

#[test]
fn primitive_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[3]));
    let s = g.softmax(z, 0).unwrap();
    for &p in g.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);

    assert_eq!(conv1d_out_len(128, 4, 2, 1), Some(64));
    let x = g.constant(Tensor::zeros(&[1, 128, 2]));
    let w = g.constant(Tensor::zeros(&[3, 2, 4]));
    let y = g.conv1d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 64, 3]);
}

#[test]
fn backward_of_simple_sums() {
    let mut g = Graph::<f64>::new();
    let x = g.param(random(&[2, 3], 1));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::<f64>::new();
    let xv = g.param(random(&[2, 3], 1));
    let yv = g.constant(random(&[2, 3], 2));
    let p = g.mul(xv, yv).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(xv).unwrap().data(), random(&[2, 3], 2).data());
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.param(random(&[3], 1));
    assert!(matches!(g.backward(x), Err(Error::Graph(_))), "non-scalar loss");
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Graph(_))), "second backward");

    let mut other = Graph::<f64>::new();
    let y = other.param(random(&[3], 1));
    let t = other.sum(y).unwrap();
    let mut g2 = Graph::<f64>::new();
    assert!(matches!(g2.backward(t), Err(Error::Graph(_))), "foreign variable");
    assert!(g2.relu(y).is_err());
}

#[test]
fn non_finite_outputs_are_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[1], &[1e300]).unwrap());
    assert!(matches!(g.mul(x, x), Err(Error::NonFinite(_))));
    assert!(g.add(x, x).is_ok());
}

#[test]
fn shape_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    let c = g.constant(Tensor::zeros(&[4]));
    assert!(matches!(g.add(a, c), Err(Error::Shape(_))));
    let x = g.constant(Tensor::zeros(&[1, 2, 2]));
    let w = g.constant(Tensor::zeros(&[1, 2, 4]));
    assert!(matches!(g.conv1d(x, w, None, 2, 0), Err(Error::Shape(_))));
    assert!(g.slice(a, 1, 2, 5).is_err());
    assert!(g.softmax(a, 2).is_err());
}

#[test]
fn dropout_identities_and_determinism() {
    let x = random(&[4, 8], 9);
    let mut g = Graph::<f64>::new();
    let v = g.constant(x.clone());
    let mut rng = stream(1);
    let a = g.dropout(v, 0.5, false, &mut rng).unwrap();
    let b = g.dropout(v, 0.0, true, &mut rng).unwrap();
    assert_eq!(g.value(a), &x);
    assert_eq!(g.value(b), &x);

    let c = g.dropout(v, 0.5, true, &mut stream(42)).unwrap();
    let d = g.dropout(v, 0.5, true, &mut stream(42)).unwrap();
    assert_eq!(g.value(c).data(), g.value(d).data());
    for (&o, &i) in g.value(c).data().iter().zip(x.data()) {
        assert!(o == 0.0 || (o - 2.0 * i).abs() < 1e-15);
    }
    assert!(g.dropout(v, 1.0, true, &mut rng).is_err());
}

#[test]
fn conv_with_identity_kernel_is_identity() {
    let x = random(&[2, 6, 1], 4);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let w = g.constant(Tensor::full(&[1, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv1d(xv, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(random(&[3], 1));
    let unused = g.param(random(&[2], 2));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut g = Graph::<f64>::new();
            let mut x = random(&[rows, cols], seed);
            x.data_mut().iter_mut().for_each(|v| *v *= scale);
            let v = g.constant(x);
            let s = g.softmax(v, 1).unwrap();
            for row in g.value(s).data().chunks(cols) {
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn f32_softmax_rows_sum_to_one(cols in 1usize..40, seed in any::<u64>()) {
            let mut g = Graph::<f32>::new();
            let v = g.constant(random(&[3, cols], seed).cast::<f32>());
            let s = g.softmax(v, 1).unwrap();
            for row in g.value(s).data().chunks(cols) {
                let total: f32 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }
}
