use hia_core::tensor::{grad_check, Graph, Mode, Tensor, Var};
use hia_core::Result;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::Rng;

type Op<'a> = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a>;

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from 0, so ReLU's kink stays outside `±h`.
fn off_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    t.data_mut().iter_mut().for_each(|v| *v += 0.05f64.copysign(*v));
    t
}

/// Contracts `op`'s output with a fixed random tensor so every output element
/// carries its own weight in the scalar objective.
/// Small enough that curvature on near-zero gradients (layer norm over two
/// channels) stays well below the bound.
const H: f64 = 1e-5;

fn check(name: &str, op: &Op, params: &[Tensor], seed: u64) -> std::result::Result<(), TestCaseError> {
    let fail = |e: hia_core::Error| TestCaseError::fail(format!("{name}: {e}"));
    let mut probe = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| probe.constant(p.clone())).collect();
    let out = op(&mut probe, &vars).map_err(fail)?;
    let weights = random(&mut hia_core::rng::stream(seed, "weights", 0), probe.shape(out));
    let objective = |g: &mut Graph, p: &[Var]| -> Result<Var> {
        let y = op(g, p)?;
        let w = g.constant(weights.clone());
        let prod = g.mul(y, w)?;
        g.sum(prod)
    };
    let r = grad_check(objective, params, H).map_err(fail)?;
    prop_assert!(r.max_rel_err < 1e-4, "{}: {:?}", name, r);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, rng_seed: RngSeed::Fixed(17), failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_primitive_matches_finite_differences(
        n in 1usize..3,
        t in 1usize..5,
        d in 2usize..5,
        k in prop::sample::select(vec![1usize, 3, 5]),
        seed in any::<u64>(),
        raw_lengths in prop::collection::vec(1usize..5, 2),
    ) {
        let mut rng = hia_core::rng::stream(seed, "case", 0);
        let lengths: Vec<usize> = raw_lengths[..n].iter().map(|&l| l.min(t)).collect();
        let mask: Vec<f64> = lengths.iter().flat_map(|&l| (0..t).map(move |i| if i < l { 1.0 } else { 0.0 })).collect();
        let segments: Vec<Vec<(usize, usize)>> =
            lengths.iter().map(|&l| (0..l).step_by(2).map(|s| (s, (s + 2).min(l))).collect()).collect();
        let words = segments.iter().map(Vec::len).max().unwrap();
        let index: Vec<Option<usize>> =
            lengths.iter().flat_map(|&l| (0..t).map(move |i| (i < l).then_some(i / 2))).collect();
        let ids: Vec<usize> = (0..n * t).map(|_| rng.random_range(0..4)).collect();
        let scale: Vec<f64> = (0..n * t * d).map(|_| rng.random_range(-2.0..2.0)).collect();

        let x = random(&mut rng, &[n, t, d]);
        let y = random(&mut rng, &[n, t, d]);
        let w = random(&mut rng, &[d, d]);
        let b = random(&mut rng, &[d]);
        // Two channels normalise to ±gamma whatever the input, leaving only an
        // eps-sized gradient, so layer norm gets one extra channel.
        let ln_x = random(&mut rng, &[n, t, d + 1]);
        let mut gamma = random(&mut rng, &[d + 1]);
        gamma.data_mut().iter_mut().for_each(|g| *g += 1.5);
        let beta = random(&mut rng, &[d + 1]);
        let kernel = random(&mut rng, &[k, d, d]);
        let table = random(&mut rng, &[4, d]);
        let pooled = random(&mut rng, &[n, d]);
        let rows = random(&mut rng, &[n, words, d]);
        let signed = off_zero(&mut rng, &[n, t, d]);
        let values = random(&mut rng, &[n, t, d]);

        let cases: Vec<(&str, Op, Vec<Tensor>)> = vec![
            ("add", Box::new(|g, p| g.add(p[0], p[1])), vec![x.clone(), y.clone()]),
            ("sub", Box::new(|g, p| g.sub(p[0], p[1])), vec![x.clone(), y.clone()]),
            ("mul", Box::new(|g, p| g.mul(p[0], p[1])), vec![x.clone(), y.clone()]),
            ("scale", Box::new(|g, p| g.scale(p[0], -1.7)), vec![x.clone()]),
            ("mul_const", Box::new(|g, p| g.mul_const(p[0], &scale)), vec![x.clone()]),
            ("add_bias", Box::new(|g, p| g.add_bias(p[0], p[1])), vec![x.clone(), b.clone()]),
            ("expand", Box::new(|g, p| g.expand(p[0], 1, 3)), vec![pooled]),
            ("reshape", Box::new(|g, p| g.reshape(p[0], &[n * t, d])), vec![x.clone()]),
            ("concat", Box::new(|g, p| g.concat(&[p[0], p[1]], 2)), vec![x.clone(), y.clone()]),
            ("slice", Box::new(|g, p| g.slice(p[0], 2, 1, d - 1)), vec![x.clone()]),
            ("stack", Box::new(|g, p| g.stack(&[p[0], p[1]], 1)), vec![x.clone(), y.clone()]),
            ("select", Box::new(|g, p| g.select(p[0], 1, t - 1)), vec![x.clone()]),
            (
                "swap_axes12",
                Box::new(|g, p| {
                    let r = g.reshape(p[0], &[n, t, 1, d])?;
                    g.swap_axes12(r)
                }),
                vec![x.clone()],
            ),
            ("matmul", Box::new(|g, p| g.matmul(p[0], p[1])), vec![x.clone(), w.clone()]),
            ("matmul_nt", Box::new(|g, p| g.matmul_nt(p[0], p[1])), vec![x.clone(), y.clone()]),
            ("linear", Box::new(|g, p| g.linear(p[0], p[1], p[2])), vec![x.clone(), w.clone(), b.clone()]),
            ("softmax", Box::new(|g, p| g.softmax(p[0], 2)), vec![x.clone()]),
            (
                "softmax_masked",
                Box::new(|g, p| {
                    let s = g.matmul_nt(p[0], p[1])?;
                    g.softmax_masked(s, &mask)
                }),
                vec![x.clone(), y.clone()],
            ),
            (
                "layer_norm",
                Box::new(|g, p| g.layer_norm(p[0], p[1], p[2], 1e-5)),
                vec![ln_x, gamma, beta],
            ),
            ("relu", Box::new(|g, p| g.relu(p[0])), vec![signed]),
            ("gelu", Box::new(|g, p| g.gelu(p[0])), vec![x.clone()]),
            ("square", Box::new(|g, p| g.square(p[0])), vec![x.clone()]),
            ("sum", Box::new(|g, p| g.sum(p[0])), vec![x.clone()]),
            ("conv1d_same", Box::new(|g, p| g.conv1d_same(p[0], p[1], p[2])), vec![x.clone(), kernel, b.clone()]),
            ("embedding", Box::new(|g, p| g.embedding(p[0], &ids, &[n, t])), vec![table]),
            ("masked_mean", Box::new(|g, p| g.masked_mean(p[0], &mask)), vec![x.clone()]),
            (
                "dropout_eval",
                Box::new(|g, p| g.dropout(p[0], 0.5, Mode::Eval, &mut hia_core::rng::stream(0, "drop", 0))),
                vec![x.clone()],
            ),
            (
                "dropout_train",
                Box::new(|g, p| g.dropout(p[0], 0.5, Mode::Train, &mut hia_core::rng::stream(seed, "drop", 0))),
                vec![x.clone()],
            ),
            ("segment_mean", Box::new(|g, p| g.segment_mean(p[0], &segments, words)), vec![x.clone()]),
            ("gather_rows", Box::new(|g, p| g.gather_rows(p[0], &index, t)), vec![rows]),
            (
                "attention",
                Box::new(|g, p| g.attention(p[0], p[1], p[2], Some(&mask))),
                vec![x.clone(), y.clone(), values],
            ),
        ];
        for (i, (name, op, params)) in cases.iter().enumerate() {
            check(name, op, params, seed ^ i as u64)?;
        }
    }
}
