use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;

use super::*;
use crate::error::Error;
use crate::rng::Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn tensor_rejects_bad_shape() {
    assert!(matches!(Tensor::new(&[2, 2], vec![1.0; 3]), Err(Error::Shape { .. })));
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let r = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(r).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let z = g.constant(t(&[2, 1], &[0.0, 0.0]));
    let r = g.matmul(a, z).unwrap();
    assert_eq!(g.value(r).shape(), &[1, 1]);
    assert_eq!(g.value(r).data(), &[0.0]);

    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let r = g.matmul(a, b).unwrap();
    assert_eq!(g.value(r).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(t(&[2], &[123.25, 123.25]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let y = g.softmax(x, 0).unwrap();
    assert!(close(g.value(y).data(), &[0.09003, 0.24473, 0.66524], 5e-6));
}

#[test]
fn softmax_along_inner_axis() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 2], &[0.0, 5.0, 0.0, -5.0]));
    let y = g.softmax(x, 0).unwrap();
    let v = g.value(y);
    assert_eq!(v.at(&[0, 0]), 0.5);
    assert!((v.at(&[0, 1]) + v.at(&[1, 1]) - 1.0).abs() < 1e-15);
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::full(&[3], 1.0));
    let zeros = g.constant(Tensor::zeros(&[3]));
    let x = g.constant(t(&[3], &[5.0, 5.0, 5.0]));
    let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
    assert!(close(g.value(y).data(), &[0.0; 3], 1e-12));

    let gz = g.constant(Tensor::zeros(&[3]));
    let beta = g.constant(t(&[3], &[0.5, -1.0, 2.0]));
    let x = g.constant(t(&[3], &[1.0, 7.0, -3.0]));
    let y = g.layer_norm(x, gz, beta, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0]);

    let ones = g.constant(Tensor::full(&[2], 1.0));
    let zeros = g.constant(Tensor::zeros(&[2]));
    let x = g.constant(t(&[2], &[1.0, 3.0]));
    let y = g.layer_norm(x, ones, zeros, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 1.0]);
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
    let k1 = g.constant(t(&[1, 1, 1], &[1.0]));
    let b0 = g.constant(Tensor::zeros(&[1]));
    let y = g.conv1d_same(x, k1, b0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

    let k3 = g.constant(t(&[3, 1, 1], &[1.0, 1.0, 1.0]));
    let y = g.conv1d_same(x, k3, b0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 6.0, 5.0]);

    let zx = g.constant(Tensor::zeros(&[4, 2]));
    let k = g.constant(Tensor::full(&[5, 2, 3], 0.7));
    let b = g.constant(t(&[3], &[1.0, -2.0, 0.25]));
    let y = g.conv1d_same(zx, k, b).unwrap();
    assert_eq!(g.value(y).shape(), &[4, 3]);
    for row in g.value(y).data().chunks(3) {
        assert_eq!(row, &[1.0, -2.0, 0.25]);
    }
}

#[test]
fn conv1d_even_kernel_is_config_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 1]));
    let k = g.constant(Tensor::zeros(&[2, 1, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(g.conv1d_same(x, k, b), Err(Error::Config(_))));
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let y = g.square(x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);

    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = g.leaf(t(&[2, 2], &[0.3, -2.0, 4.0, 1.5]));
    let c = g.matmul(a, b).unwrap();
    let s = g.sum(c).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(b).unwrap().data(), &[1.0; 4]);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let unrelated = g.leaf(t(&[2], &[1.0, 1.0]));
    let y = g.square(x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(unrelated).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn backward_accumulates_fan_out() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(1.25));
    let y = g.add(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn non_finite_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(1e200));
    assert!(matches!(g.square(x), Err(Error::NonFinite { .. })));
}

#[test]
fn grad_check_examples() {
    let params = [t(&[2], &[1.0, 2.0])];
    let r = grad_check(
        |g, p| {
            let s = g.square(p[0])?;
            g.sum(s)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-7, "{r:?}");

    let r = grad_check(|g, _| Ok(g.constant(Tensor::scalar(4.0))), &params, 1e-5).unwrap();
    assert_eq!(r.max_rel_err, 0.0);
}

#[test]
fn dropout_modes() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::full(&[4, 8], 1.5));
    let mut rng = Rng::seed_from_u64(3);
    let y = g.dropout(x, 0.1, Mode::Eval, &mut rng).unwrap();
    assert_eq!(y, x);

    let run = |seed| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[4, 8], 1.5));
        let mut rng = Rng::seed_from_u64(seed);
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        g.value(y).data().to_vec()
    };
    let a = run(11);
    assert_eq!(a, run(11));
    assert_ne!(a, run(12));
    assert!(a.iter().all(|&v| v == 0.0 || v == 3.0));
}

#[test]
fn masked_softmax_ignores_masked_keys_exactly() {
    let run = |pad: f64| {
        let mut g = Graph::new();
        let s = g.leaf(t(&[1, 2, 3], &[0.1, 0.4, pad, 1.0, -0.3, pad]));
        let y = g.softmax_masked(s, &[1.0, 1.0, 0.0]).unwrap();
        let w = g.constant(t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = g.mul(y, w).unwrap();
        let l = g.sum(p).unwrap();
        g.backward(l).unwrap();
        (g.value(y).data().to_vec(), g.grad(s).unwrap().data().to_vec())
    };
    let (y1, g1) = run(0.0);
    let (y2, g2) = run(17.0);
    assert_eq!(y1, y2);
    assert_eq!(g1, g2);
    assert_eq!(y1[2], 0.0);
    assert_eq!(g1[2], 0.0);
}

#[test]
fn segment_mean_and_gather() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 4, 1], &[1.0, 3.0, 5.0, 9.0]));
    let y = g.segment_mean(x, &[vec![(0, 2), (2, 3)]], 3).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 5.0, 0.0]);
    let back = g.gather_rows(y, &[Some(0), Some(0), Some(1), None], 4).unwrap();
    assert_eq!(g.value(back).data(), &[2.0, 2.0, 5.0, 0.0]);
    let s = g.sum(back).unwrap();
    g.backward(s).unwrap();
    // d/dx of 2*mean(x0,x1) + x2 = [1, 1, 1, 0]
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 0.0]);
}

#[test]
fn stack_select_roundtrip() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = g.leaf(t(&[2, 3], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
    let s = g.stack(&[a, b], 1).unwrap();
    assert_eq!(g.shape(s), &[2, 2, 3]);
    assert_eq!(g.value(s).data(), &[1.0, 2.0, 3.0, 7.0, 8.0, 9.0, 4.0, 5.0, 6.0, 10.0, 11.0, 12.0]);
    let back = g.select(s, 1, 1).unwrap();
    assert_eq!(g.value(back), g.value(b));
}

#[test]
fn swap_axes12_permutes() {
    let mut g = Graph::new();
    let data: Vec<f64> = (0..12).map(f64::from).collect();
    let x = g.leaf(Tensor::new(&[1, 2, 3, 2], data).unwrap());
    let y = g.swap_axes12(x).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 2, 2]);
    let v = g.value(y);
    assert_eq!(v.at(&[0, 2, 1, 0]), g.value(x).at(&[0, 1, 2, 0]));
    let z = g.swap_axes12(y).unwrap();
    assert_eq!(g.value(z), g.value(x));
}

#[test]
fn embedding_rejects_unknown_id() {
    let mut g = Graph::new();
    let table = g.leaf(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.embedding(table, &[0, 3], &[2]), Err(Error::Lookup(_))));
}
