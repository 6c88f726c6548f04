use autograd::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-0.5..0.5))
}

proptest! {
    #[test]
    fn conv_transpose_is_adjoint_for_any_geometry(
        len in 1usize..12,
        kernel in 1usize..5,
        stride in 1usize..4,
        pad in 0usize..3,
        c_in in 1usize..4,
        c_out in 1usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(len + 2 * pad >= kernel);
        let l_out = (len + 2 * pad - kernel) / stride + 1;
        let base = (l_out - 1) * stride + kernel;
        prop_assume!(base >= 2 * pad && len >= base - 2 * pad);
        let output_pad = len - (base - 2 * pad);
        prop_assume!(output_pad < stride);
        let x = tensor(&[2, c_in, len], seed);
        let w = tensor(&[c_out, c_in, kernel], seed ^ 1);
        let y = tensor(&[2, c_out, l_out], seed ^ 2);
        let mut g = Graph::eval();
        let (xv, wv, yv) = (g.input(x.clone()), g.input(w), g.input(y.clone()));
        let cx = g.conv1d(xv, wv, None, stride, pad).unwrap();
        prop_assert_eq!(g.shape(cx), &[2, c_out, l_out]);
        let ty = g.conv_transpose1d(yv, wv, None, stride, pad, output_pad).unwrap();
        prop_assert_eq!(g.shape(ty), &[2, c_in, len]);
        let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.value(ty).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn sum_of_sum_is_additive(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let a = tensor(&[rows, cols], seed);
        let b = tensor(&[rows, cols], !seed);
        let mut g = Graph::eval();
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let s = g.add(av, bv).unwrap();
        let total = g.sum(s);
        prop_assert!((g.value(total).item() - a.sum() - b.sum()).abs() < 1e-12);
    }
}
