use hia_core::data::{synth_generate, Batch, SynthConfig};
use hia_core::model::{Hia, ModelConfig, PhoneScoreInjection};
use rand::Rng;

/// At `h = 1e-4` the `h²` truncation term alone reaches ~1e-4 relative error on
/// small-gradient elements for some initializations; `1e-5` leaves room for
/// rounding while keeping truncation negligible.
const H: f64 = 1e-5;

fn tiny_batch() -> Batch {
    let cfg = SynthConfig {
        n_utterances: 200,
        min_words: 2,
        max_words: 3,
        phones_per_word: (1, 2),
        seed: 5,
        ..Default::default()
    };
    let data = synth_generate(&cfg).unwrap();
    let full = data.iter().position(|s| s.len() == 6).expect("a six-phone utterance");
    let short = data.iter().position(|s| s.len() < 6).expect("a shorter utterance");
    Batch::from_samples(&data, &[full, short], 6).unwrap()
}

fn tiny(cfg: ModelConfig) -> ModelConfig {
    ModelConfig { embed_dim: 8, enc_layers: 1, dec_layers: 1, max_len: 6, ..cfg }
}

/// Moves every parameter off its initial value. With all inputs to the word
/// branch switched off, zero biases put its layer norms at zero variance, where
/// central differences are meaningless.
fn jittered(model: Hia, seed: u64) -> Hia {
    let mut rng = hia_core::rng::stream(seed, "jitter", 0);
    let mut params = model.params.clone();
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += rng.random::<f64>() - 0.5;
        }
    }
    Hia::from_params(model.config, params).unwrap()
}

#[test]
fn full_model_matches_finite_differences() {
    let batch = tiny_batch();
    assert_eq!((batch.size, batch.len), (2, 6));
    for seed in 0..5 {
        let model = Hia::new(tiny(ModelConfig::default()), seed).unwrap();
        let r = model.grad_check(&batch, H).unwrap();
        assert_eq!(r.checked, model.num_parameters());
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn ablated_and_projected_wirings_match_finite_differences() {
    let batch = tiny_batch();
    let variants = [
        ModelConfig { use_residual: false, use_hierarchy: false, ..Default::default() },
        ModelConfig {
            phone_score_injection: PhoneScoreInjection::Projected,
            n_heads: 2,
            ..Default::default()
        },
    ];
    for (i, cfg) in variants.into_iter().enumerate() {
        let model = Hia::new(tiny(cfg), 10 + i as u64).unwrap();
        let r = model.grad_check(&batch, H).unwrap();
        assert!(r.max_rel_err < 1e-4, "variant {i}: {r:?}");
    }
}

#[test]
fn parallel_wiring_matches_finite_differences_off_the_zero_point() {
    let model = jittered(Hia::new(tiny(ModelConfig::default().parallel()), 12).unwrap(), 2);
    // Jitter inflates the loss and with it the rounding noise `ε·|L| / h`, so
    // this point needs the larger step.
    let r = model.grad_check(&tiny_batch(), 1e-4).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}
