use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{self, random_tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

const GRAD_TOL: f64 = 1e-4;

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i2 = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
    let m = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).unwrap(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.leaf(t(&[1, 2], &[1.0, 2.0]), false);
    let b = tape.leaf(t(&[2, 1], &[3.0, 4.0]), false);
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).unwrap(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros([2, 3]), false);
    let b = tape.leaf(Tensor::zeros([2, 3]), false);
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn matmul_grad_is_ones_times_b_transposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, &[3, 4], 1.0);
    let b = random_tensor(&mut rng, &[4, 2], 1.0);
    let mut tape = Tape::new();
    let va = tape.leaf(a, true);
    let vb = tape.leaf(b.clone(), false);
    let c = tape.matmul(va, vb).unwrap();
    let s = tape.sum(c).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(va).unwrap().unwrap();
    for i in 0..3 {
        for p in 0..4 {
            let want: f64 = (0..2).map(|j| b.data()[p * 2 + j]).sum();
            assert!((g[i * 4 + p] - want).abs() < 1e-12);
        }
    }
    let rep = gradcheck::check(&[random_tensor(&mut rng, &[3, 4], 1.0), b], |tp, v| {
        tp.matmul(v[0], v[1])
    })
    .unwrap();
    assert!(rep.max_rel_err < GRAD_TOL, "{rep:?}");
}

#[test]
fn hadamard_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
    let b = tape.leaf(t(&[3], &[4.0, 5.0, 6.0]), false);
    let ones = tape.leaf(Tensor::full([3], 1.0), false);
    let zeros = tape.leaf(Tensor::zeros([3]), false);
    let p = tape.hadamard(a, b).unwrap();
    assert_eq!(tape.value(p).unwrap(), &[4.0, 10.0, 18.0]);
    let id = tape.hadamard(a, ones).unwrap();
    assert_eq!(tape.value(id).unwrap(), &[1.0, 2.0, 3.0]);
    let z = tape.hadamard(a, zeros).unwrap();
    assert_eq!(tape.value(z).unwrap(), &[0.0; 3]);
    let s = tape.sum(z).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().unwrap(), &[0.0; 3]);

    let c = tape.leaf(Tensor::zeros([2]), false);
    assert!(tape.hadamard(a, c).is_err());
}

#[test]
fn conv2d_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]), false);
    let id = tape.leaf(t(&[1, 1, 1, 1], &[1.0]), false);
    let y = tape.conv2d(x, id, 1, 0).unwrap();
    assert_eq!(tape.value(y).unwrap(), tape.value(x).unwrap());

    let ones = tape.leaf(Tensor::full([1, 3, 3], 1.0), false);
    let k = tape.leaf(Tensor::full([1, 1, 3, 3], 1.0), false);
    let y = tape.conv2d(ones, k, 1, 0).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[1, 1, 1]);
    assert_eq!(tape.value(y).unwrap(), &[9.0]);

    let big = tape.leaf(Tensor::full([1, 1, 4, 4], 1.0), false);
    assert!(tape.conv2d(ones, big, 1, 0).is_err());
    // Padding makes the same kernel fit.
    let y = tape.conv2d(ones, big, 1, 1).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[1, 2, 2]);
}

#[test]
fn conv2d_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let x = random_tensor(&mut rng, &[2, 5, 4], 1.0);
        let w = random_tensor(&mut rng, &[3, 2, 3, 3], 1.0);
        let rep = gradcheck::check(&[x, w], |tp, v| tp.conv2d(v[0], v[1], stride, pad)).unwrap();
        assert!(rep.max_rel_err < GRAD_TOL, "stride {stride} pad {pad}: {rep:?}");
    }
}

#[test]
fn conv_transpose2d_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 1], &[2.5]), false);
    let k = tape.leaf(Tensor::full([1, 1, 2, 2], 1.0), false);
    let y = tape.conv_transpose2d(x, k, 2, 0).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[1, 2, 2]);
    assert_eq!(tape.value(y).unwrap(), &[2.5; 4]);

    let img = tape.leaf(t(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]), false);
    let id = tape.leaf(t(&[1, 1, 1, 1], &[1.0]), false);
    let y = tape.conv_transpose2d(img, id, 1, 0).unwrap();
    assert_eq!(tape.value(y).unwrap(), tape.value(img).unwrap());

    // (1 − 1)·1 − 2·1 + 1 < 1
    let one = tape.leaf(Tensor::full([1, 1, 1], 1.0), false);
    assert!(tape.conv_transpose2d(one, id, 1, 1).is_err());
}

#[test]
fn conv_transpose2d_output_size_rule() {
    let mut tape = Tape::new();
    for (h, stride, pad, k) in [(4, 2, 1, 4), (3, 1, 1, 3), (5, 3, 0, 2), (2, 5, 1, 7)] {
        let x = tape.leaf(Tensor::full([2, h, h + 1], 1.0), false);
        let w = tape.leaf(Tensor::full([2, 3, k, k], 1.0), false);
        let y = tape.conv_transpose2d(x, w, stride, pad).unwrap();
        let want = (h - 1) * stride + k - 2 * pad;
        assert_eq!(tape.shape(y).unwrap(), &[3, want, want + stride]);
    }
}

#[test]
fn conv_transpose2d_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (2, 0, 3)] {
        let x = random_tensor(&mut rng, &[2, 3, 4], 1.0);
        let w = random_tensor(&mut rng, &[2, 3, k, k], 1.0);
        let rep =
            gradcheck::check(&[x, w], |tp, v| tp.conv_transpose2d(v[0], v[1], stride, pad))
                .unwrap();
        assert!(rep.max_rel_err < GRAD_TOL, "{rep:?}");
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> for shared weights.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[2, 6, 6], 1.0);
    let w = random_tensor(&mut rng, &[3, 2, 4, 4], 1.0);
    let mut tape = Tape::new();
    let vx = tape.leaf(x.clone(), false);
    let vw = tape.leaf(w, false);
    let cx = tape.conv2d(vx, vw, 2, 1).unwrap();
    let y = random_tensor(&mut rng, tape.shape(cx).unwrap(), 1.0);
    let vy = tape.leaf(y.clone(), false);
    let ty = tape.conv_transpose2d(vy, vw, 2, 1).unwrap();
    assert_eq!(tape.shape(ty).unwrap(), x.shape());
    let lhs: f64 = tape.value(cx).unwrap().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(tape.value(ty).unwrap()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn pixel_shuffle_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[4, 1, 1], &[1., 2., 3., 4.]), false);
    let y = tape.pixel_shuffle(x, 2).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[1, 2, 2]);
    assert_eq!(tape.value(y).unwrap(), &[1., 2., 3., 4.]);
    let same = tape.pixel_shuffle(x, 1).unwrap();
    assert_eq!(tape.value(same).unwrap(), tape.value(x).unwrap());
    let bad = tape.leaf(Tensor::zeros([3, 2, 2]), false);
    assert!(tape.pixel_shuffle(bad, 2).is_err());
}

#[test]
fn pixel_shuffle_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[8, 2, 3], 1.0);
    let rep = gradcheck::check(&[x], |tp, v| tp.pixel_shuffle(v[0], 2)).unwrap();
    assert!(rep.max_rel_err < GRAD_TOL, "{rep:?}");
}

proptest! {
    #[test]
    fn pixel_shuffle_is_a_permutation(c in 1usize..3, s in 1usize..4, h in 1usize..4, w in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[c * s * s, h, w], 1.0);
        let mut tape = Tape::new();
        let vx = tape.leaf(x.clone(), true);
        let y = tape.pixel_shuffle(vx, s).unwrap();
        let out = tape.value(y).unwrap().to_vec();
        let total: f64 = x.data().iter().sum();
        prop_assert!((out.iter().sum::<f64>() - total).abs() < 1e-9);
        let mut sorted_in = x.data().to_vec();
        let mut sorted_out = out.clone();
        sorted_in.sort_by(f64::total_cmp);
        sorted_out.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted_in, sorted_out);

        // Backward is the inverse permutation: pulling the output back as a
        // gradient recovers the input exactly.
        let g = tape.constant(vec![c, s * h, s * w], out).unwrap();
        let dot = tape.hadamard(y, g).unwrap();
        let loss = tape.sum(dot).unwrap();
        tape.backward(loss).unwrap();
        prop_assert_eq!(tape.grad(vx).unwrap().unwrap(), x.data());
    }

    #[test]
    fn forward_ops_are_bit_deterministic(seed in 0u64..1000) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, &[4, 4, 4], 1.0);
            let w = random_tensor(&mut rng, &[4, 4, 3, 3], 1.0);
            let mut tape = Tape::new();
            let vx = tape.leaf(x, false);
            let vw = tape.leaf(w, false);
            let a = tape.conv2d(vx, vw, 1, 1).unwrap();
            let b = tape.instance_norm(a, 1e-5).unwrap();
            let c = tape.gelu(b).unwrap();
            let d = tape.pixel_shuffle(c, 2).unwrap();
            tape.value(d).unwrap().to_vec()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[0.0, std::f64::consts::FRAC_PI_2]), false);
    let g = tape.gelu(x).unwrap();
    assert_eq!(tape.value(g).unwrap()[0], 0.0);
    let s = tape.unary(Unary::Sin, x).unwrap();
    assert_eq!(tape.value(s).unwrap()[1], 1.0);
    let a = tape.add_scalar(x, 1.0).unwrap();
    assert_eq!(tape.value(a).unwrap()[0], 1.0);
    let m = tape.mul_scalar(x, 2.0).unwrap();
    assert_eq!(tape.value(m).unwrap()[1], std::f64::consts::PI);
}

#[test]
fn gelu_matches_tanh_approximation() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[-1.5, 0.3, 2.0]), false);
    let g = tape.gelu(x).unwrap();
    for (xv, gv) in [-1.5f64, 0.3, 2.0].iter().zip(tape.value(g).unwrap()) {
        let inner = (2.0 / std::f64::consts::PI).sqrt() * (xv + 0.044715 * xv.powi(3));
        assert!((gv - 0.5 * xv * (1.0 + inner.tanh())).abs() < 1e-15);
    }
}

#[test]
fn elementwise_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kinds = [
        Unary::Gelu,
        Unary::Sin,
        Unary::Cos,
        Unary::AddScalar(0.7),
        Unary::MulScalar(-1.3),
        Unary::Sigmoid,
        Unary::Abs,
    ];
    for kind in kinds {
        // keep |x| away from the kink of Abs
        let mut x = random_tensor(&mut rng, &[7], 2.0);
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.1 {
                *v += 0.2
            }
        });
        let rep = gradcheck::check(&[x], |tp, v| tp.unary(kind, v[0])).unwrap();
        assert!(rep.max_rel_err < GRAD_TOL, "{kind:?}: {rep:?}");
    }
}

#[test]
fn binary_and_layout_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&mut rng, &[3, 4], 1.0);
    let mut b = random_tensor(&mut rng, &[3, 4], 1.0);
    b.data_mut().iter_mut().for_each(|v| *v += 2.0f64.copysign(*v));
    let inputs = [a, b];
    for (name, rep) in [
        ("add", gradcheck::check(&inputs, |tp, v| tp.add(v[0], v[1]))),
        ("sub", gradcheck::check(&inputs, |tp, v| tp.sub(v[0], v[1]))),
        ("div", gradcheck::check(&inputs, |tp, v| tp.div(v[0], v[1]))),
        ("hadamard", gradcheck::check(&inputs, |tp, v| tp.hadamard(v[0], v[1]))),
        ("transpose", gradcheck::check(&inputs, |tp, v| tp.transpose(v[0]))),
        ("mean", gradcheck::check(&inputs, |tp, v| tp.mean(v[1]))),
        ("concat", gradcheck::check(&inputs, |tp, v| tp.concat(&[v[0], v[1]]))),
        ("reshape", gradcheck::check(&inputs, |tp, v| tp.reshape(v[0], [2, 6]))),
    ] {
        let rep = rep.unwrap();
        assert!(rep.max_rel_err < GRAD_TOL, "{name}: {rep:?}");
    }
}

#[test]
fn broadcast_ops_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, &[3, 2, 4], 1.0);
    let v = random_tensor(&mut rng, &[3], 1.0);
    let row = random_tensor(&mut rng, &[4], 1.0);
    let inputs = [x, v, row];
    for (name, rep) in [
        ("mul_channels", gradcheck::check(&inputs, |tp, v| tp.mul_channels(v[0], v[1]))),
        ("add_channels", gradcheck::check(&inputs, |tp, v| tp.add_channels(v[0], v[1]))),
        ("add_bias", gradcheck::check(&inputs, |tp, v| tp.add_bias(v[0], v[2]))),
        (
            "filter",
            gradcheck::check(&inputs, |tp, v| tp.filter(v[0], &[0.1, 0.2, 0.3, 0.4], 2, 2)),
        ),
    ] {
        let rep = rep.unwrap();
        assert!(rep.max_rel_err < GRAD_TOL, "{name}: {rep:?}");
    }
}

#[test]
fn instance_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 1, 2], &[5.0, 5.0, 1.0, 3.0]), false);
    let y = tape.instance_norm(x, 1e-12).unwrap();
    let v = tape.value(y).unwrap();
    assert_eq!(&v[..2], &[0.0, 0.0]);
    assert!(close(&v[2..], &[-1.0, 1.0], 1e-9));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = tape.leaf(random_tensor(&mut rng, &[4, 5, 5], 3.0), false);
    let y = tape.instance_norm(r, 1e-5).unwrap();
    for ch in tape.value(y).unwrap().chunks(25) {
        let mean = ch.iter().sum::<f64>() / 25.0;
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn instance_norm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_tensor(&mut rng, &[3, 3, 4], 1.0);
    let rep = gradcheck::check(&[x], |tp, v| tp.instance_norm(v[0], 1e-5)).unwrap();
    assert!(rep.max_rel_err < GRAD_TOL, "{rep:?}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let u = tape.leaf(Tensor::full([5], 0.3), false);
    let y = tape.softmax(u, 0).unwrap();
    assert!(close(tape.value(y).unwrap(), &[0.2; 5], 1e-15));

    let x = tape.leaf(t(&[2], &[0.0, 3f64.ln()]), false);
    let y = tape.softmax(x, 0).unwrap();
    assert!(close(tape.value(y).unwrap(), &[0.25, 0.75], 1e-15));

    let m = tape.leaf(t(&[2, 3], &[1., 2., 3., -1., 0., 4.]), false);
    let shifted = tape.add_scalar(m, 100.0).unwrap();
    let a = tape.softmax(m, 1).unwrap();
    let b = tape.softmax(shifted, 1).unwrap();
    assert!(close(tape.value(a).unwrap(), tape.value(b).unwrap(), 1e-12));
    for row in tape.value(a).unwrap().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    assert!(tape.softmax(m, 2).is_err());
}

#[test]
fn softmax_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, &[3, 4, 2], 2.0);
    for axis in 0..3 {
        let rep = gradcheck::check(std::slice::from_ref(&x), |tp, v| tp.softmax(v[0], axis)).unwrap();
        assert!(rep.max_rel_err < GRAD_TOL, "axis {axis}: {rep:?}");
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]), true);
    let unused = tape.leaf(t(&[2], &[4.0, 4.0]), true);
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().unwrap(), &[1.0; 3]);
    assert_eq!(tape.grad(unused).unwrap().unwrap(), &[0.0; 2]);

    tape.zero_grad();
    let sq = tape.hadamard(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().unwrap(), &[2.0, -4.0, 1.0]);
    // accumulate without reset
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().unwrap(), &[4.0, -8.0, 2.0]);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([3]), true);
    assert!(matches!(tape.backward(x), Err(crate::Error::NonScalarLoss(_))));
    let mut other = Tape::new();
    let y = other.leaf(Tensor::zeros([1]), true);
    assert!(matches!(tape.backward(y), Err(crate::Error::DetachedTape)));
}

#[test]
fn backward_on_independent_subgraphs_concatenates() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random_tensor(&mut rng, &[4], 1.0);
    let b = random_tensor(&mut rng, &[3, 3], 1.0);

    let grad_of = |with_a: bool, with_b: bool| {
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone(), true);
        let vb = tape.leaf(b.clone(), true);
        let sa = tape.unary(Unary::Sin, va).unwrap();
        let la = tape.sum(sa).unwrap();
        let sb = tape.matmul(vb, vb).unwrap();
        let lb = tape.mean(sb).unwrap();
        let loss = match (with_a, with_b) {
            (true, true) => tape.add(la, lb).unwrap(),
            (true, false) => la,
            _ => lb,
        };
        tape.backward(loss).unwrap();
        (
            tape.grad(va).unwrap().unwrap().to_vec(),
            tape.grad(vb).unwrap().unwrap().to_vec(),
        )
    };
    let (ga, gb) = grad_of(true, true);
    assert_eq!(ga, grad_of(true, false).0);
    assert_eq!(gb, grad_of(false, true).1);
}

#[test]
fn f32_mode_rounds_outputs() {
    let mut tape = Tape::with_precision(Precision::F32);
    let x = tape.leaf(t(&[1], &[0.1]), false);
    let y = tape.mul_scalar(x, 3.0).unwrap();
    let v = tape.value(y).unwrap()[0];
    assert_eq!(v, (0.1f64 * 3.0) as f32 as f64);
    assert_ne!(v, 0.1 * 3.0);
}
