use candle_core::{DType, Device, Tensor};
use resyn_core::degradation::{NoiseBank, RoomSampler};
use resyn_core::synth::{noise_bank, speech_utterance};

use resyn_models::adapter::{
    adapted_layers, feature_loss, feature_loss_tensor, forward_with_adapters, param_breakdown, train_cleaner,
    trainable_param_fraction, AdapterConfig, AdapterReference, AdapterStack, Cleaner, CleanerMode,
    CleanerTrainOptions, LayeredEncoder, Wiring,
};
use resyn_models::data::{SyntheticClips, SyntheticPairs};
use resyn_models::encoder::{extract_features, ConformerConfig, EncoderState, FeatureSequence};
use resyn_models::params::ParamStore;
use resyn_models::{Error, Result};

fn seq(frames: usize, dim: usize, values: Vec<f32>) -> FeatureSequence {
    FeatureSequence {
        frames,
        dim,
        frame_rate: 25.0,
        values,
    }
}

fn tiny_pairs(seed: u64, count: usize) -> SyntheticPairs {
    let bank: NoiseBank = noise_bank(seed, 1, 3.0).unwrap();
    SyntheticPairs {
        clips: SyntheticClips {
            seed,
            count,
            seconds: 2.0,
        },
        bank,
        rooms: RoomSampler {
            max_order: 3,
            ..Default::default()
        },
    }
}

#[test]
fn zero_adapters_reproduce_frozen_tap_exactly() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 3).unwrap();
    let wave = speech_utterance(1, 1.3);
    for wiring in [Wiring::Parallel, Wiring::Sequential] {
        let mut cfg = AdapterConfig::for_encoder(&enc.config, 16);
        cfg.wiring = wiring;
        let mut store = ParamStore::new(9);
        let stack = AdapterStack::new(&mut store.frozen(), &cfg, enc.config.num_layers).unwrap();
        let cleaned = forward_with_adapters(&wave, &enc, &stack).unwrap();
        let frozen = &extract_features(&wave, &enc).unwrap()[enc.config.tap_layer - 1];
        assert_eq!(cleaned.frames, frozen.frames);
        assert_eq!(cleaned.dim, frozen.dim);
        assert_eq!(cleaned.values, frozen.values, "{wiring:?}");
    }
}

/// One layer: `h = W x` with a fixed 2×2 matrix.
struct ToyEncoder(Tensor);

impl LayeredEncoder for ToyEncoder {
    fn model_dim(&self) -> usize {
        2
    }
    fn num_layers(&self) -> usize {
        1
    }
    fn tap_layer(&self) -> usize {
        1
    }
    fn layer_forward(&self, _: usize, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.0.t()?)?)
    }
}

#[test]
fn toy_layer_with_hand_set_adapter() {
    let dev = Device::Cpu;
    let enc = ToyEncoder(Tensor::new(&[[1f32, 2.], [0., -1.]], &dev).unwrap());
    let cfg = AdapterConfig {
        hidden_dim: 2,
        io_dim: 2,
        activation: resyn_models::adapter::Activation::Relu,
        wiring: Wiring::Parallel,
    };
    let mut store = ParamStore::new(0);
    let stack = AdapterStack::new(&mut store.root(), &cfg, 1).unwrap();
    let set = |name: &str, v: Tensor| store.get(name).unwrap().set(&v).unwrap();
    set("adapter0.up.weight", Tensor::new(&[[1f32, 0.], [0., 1.]], &dev).unwrap());
    set("adapter0.up.bias", Tensor::new(&[0f32, -5.], &dev).unwrap());
    set("adapter0.down.weight", Tensor::new(&[[2f32, 0.], [1., 1.]], &dev).unwrap());
    set("adapter0.down.bias", Tensor::new(&[0.5f32, 0.], &dev).unwrap());

    let x = Tensor::new(&[[[3f32, 1.]]], &dev).unwrap();
    // h = [3 + 2, -1] = [5, -1]
    // relu([3, 1 - 5]) = [3, 0]; down = [6 + 0.5, 3] = [6.5, 3]
    let y: Vec<f32> = adapted_layers(&enc, &stack, &x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(y, vec![11.5, 2.0]);

    let seq_cfg = AdapterConfig {
        wiring: Wiring::Sequential,
        ..cfg
    };
    let stack = AdapterStack::new(&mut store.root(), &seq_cfg, 1).unwrap();
    // relu([5, -1 - 5]) = [5, 0]; down = [10.5, 5]
    let y: Vec<f32> = adapted_layers(&enc, &stack, &x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(y, vec![15.5, 4.0]);
}

#[test]
fn adapter_dim_mismatch_is_rejected() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 0).unwrap();
    let mut store = ParamStore::new(0);
    let cfg = AdapterConfig::desk();
    let stack = AdapterStack::new(&mut store.frozen(), &cfg, 3).unwrap();
    let err = forward_with_adapters(&speech_utterance(0, 1.0), &enc, &stack).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn feature_loss_hand_values() {
    let t = seq(2, 2, vec![1., 0., 0., 1.]);
    let l = feature_loss(&seq(2, 2, vec![0.; 4]), &t).unwrap();
    assert_eq!((l.l1, l.l2, l.sc, l.total), (0.5, 0.5, 1.0, 2.0));
    assert!(!l.sc_guarded);

    let l = feature_loss(&t, &t).unwrap();
    assert_eq!((l.l1, l.l2, l.sc, l.total), (0.0, 0.0, 0.0, 0.0));

    let z = feature_loss(&t, &seq(2, 2, vec![0.; 4])).unwrap();
    assert!(z.sc_guarded && z.sc.is_finite() && z.sc > 0.0);

    assert!(matches!(feature_loss(&t, &seq(1, 4, vec![0.; 4])), Err(Error::Shape(_))));
}

#[test]
fn tensor_loss_agrees_with_sequence_loss() {
    let dev = Device::Cpu;
    let p: Vec<f32> = (0..24).map(|i| ((i * 7 % 11) as f32 - 5.0) / 3.0).collect();
    let t: Vec<f32> = (0..24).map(|i| ((i * 5 % 13) as f32 - 6.0) / 4.0).collect();
    let a = feature_loss(&seq(6, 4, p.clone()), &seq(6, 4, t.clone())).unwrap();
    let pt = Tensor::from_vec(p, (1, 6, 4), &dev).unwrap();
    let tt = Tensor::from_vec(t, (1, 6, 4), &dev).unwrap();
    let [l1, l2, sc, total] = feature_loss_tensor(&pt, &tt).unwrap().values().unwrap();
    for (x, y) in [(l1, a.l1), (l2, a.l2), (sc, a.sc), (total, a.total)] {
        assert!((x - y).abs() < 1e-5 * y.max(1.0), "{x} vs {y}");
    }
}

#[test]
fn feature_loss_gradient_matches_central_differences() {
    let dev = Device::Cpu;
    // 0.1 s at 25 Hz rounds to 3 frames
    let (frames, dim) = (3, 8);
    let n = frames * dim;
    let p0: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
    // offset keeps every |Δ| away from its kink
    let t: Vec<f64> = (0..n).map(|i| ((i * 11 % 19) as f64 - 9.0) / 6.0 + 0.013).collect();
    let target = Tensor::from_vec(t, (1, frames, dim), &dev).unwrap();
    let loss = |p: &[f64]| -> f64 {
        let pt = Tensor::from_vec(p.to_vec(), (1, frames, dim), &dev).unwrap();
        feature_loss_tensor(&pt, &target).unwrap().values().unwrap()[3]
    };
    let var = candle_core::Var::from_tensor(&Tensor::from_vec(p0.clone(), (1, frames, dim), &dev).unwrap()).unwrap();
    let total = feature_loss_tensor(var.as_tensor(), &target).unwrap().total;
    let grads = total.backward().unwrap();
    let g: Vec<f64> = grads.get(&var).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut up = p0.clone();
        let mut dn = p0.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3));
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn adapter_count_matches_closed_form_and_enumeration() {
    let enc = ConformerConfig::desk();
    let cfg = AdapterConfig::desk();
    let b = param_breakdown(&enc, CleanerMode::Adapter, &cfg).unwrap();
    assert_eq!(b.trainable, 6 * (2 * 256 * 64 + 64 + 256));
    assert_eq!(b.trainable, cfg.param_count(6));
    assert_eq!(b.encoder, enc.param_count());
    assert_eq!(b.encoder, 9_408_512);
    assert!(b.relative_to_encoder < 0.05);
    assert_eq!(b.fraction, 198_528.0 / (9_408_512.0 + 198_528.0));

    let off = AdapterConfig {
        hidden_dim: 0,
        ..cfg.clone()
    };
    assert_eq!(trainable_param_fraction(&enc, CleanerMode::Adapter, &off).unwrap(), 0.0);
    assert_eq!(trainable_param_fraction(&enc, CleanerMode::FullFinetune, &cfg).unwrap(), 1.0);
    let conf = param_breakdown(&enc, CleanerMode::ConformerCleaner, &cfg).unwrap();
    assert!(conf.trainable > b.trainable);
}

#[test]
fn reference_adapter_dimensions() {
    let r = AdapterReference::paper();
    assert_eq!((r.hidden_dim, r.io_dim), (1024, 1532));
    assert_eq!(r.per_layer_params(), 2 * 1532 * 1024 + 1024 + 1532);
    assert_eq!(r.quoted_adapter_params, 20_000_000);
    assert_eq!(r.quoted_cleaner_params, 100_000_000);
    assert_eq!((r.reference_steps, r.reference_batch), (800_000, 512));
    assert_eq!(CleanerTrainOptions::default().reference_steps, 800_000);
    assert_eq!(CleanerTrainOptions::default().reference_batch, 512);
}

fn quick_opts(steps: usize) -> CleanerTrainOptions {
    CleanerTrainOptions {
        steps,
        batch: 2,
        crop_seconds: 1.0,
        learning_rate: 3e-3,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn adapter_training_keeps_encoder_and_lowers_loss() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 1).unwrap();
    let hash = enc.content_hash().unwrap();
    let data = tiny_pairs(2, 16);
    let cfg = AdapterConfig::for_encoder(&enc.config, 32);
    let out = train_cleaner(&data, &enc, CleanerMode::Adapter, &cfg, &quick_opts(40)).unwrap();
    assert_eq!(out.encoder_hash_before, hash);
    assert_eq!(out.encoder_hash_after, hash);
    assert_eq!(enc.content_hash().unwrap(), hash);
    assert_eq!(out.curve.len(), 40);
    assert!(out.curve.windows(2).all(|w| w[1].seconds >= w[0].seconds));
    for p in &out.curve {
        assert!((p.total - (p.l1 + p.l2 + p.sc)).abs() < 1e-5);
    }
    let head: f64 = out.curve[..5].iter().map(|p| p.total).sum::<f64>() / 5.0;
    let tail: f64 = out.curve[35..].iter().map(|p| p.total).sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn every_mode_trains_without_touching_the_encoder() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 4).unwrap();
    let hash = enc.content_hash().unwrap();
    let data = tiny_pairs(3, 8);
    let cfg = AdapterConfig::for_encoder(&enc.config, 16);
    for mode in CleanerMode::ALL {
        let init = Cleaner::init(mode, &enc, &cfg, 0).unwrap();
        let init_hash = init.content_hash().unwrap();
        let out = train_cleaner(&data, &enc, mode, &cfg, &quick_opts(3)).unwrap();
        assert_eq!(enc.content_hash().unwrap(), hash, "{mode:?}");
        assert_ne!(out.cleaner.content_hash().unwrap(), init_hash, "{mode:?} did not update");
    }
}

#[test]
fn fresh_cleaners_start_at_the_frozen_tap() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 6).unwrap();
    let wave = speech_utterance(8, 1.0);
    let frozen = enc.tap_batch(&[&wave.samples]).unwrap();
    let cfg = AdapterConfig::for_encoder(&enc.config, 8);
    for mode in CleanerMode::ALL {
        let c = Cleaner::init(mode, &enc, &cfg, 0).unwrap();
        let y = c.features(&enc, &[&wave.samples]).unwrap();
        let d: f32 = (y - &frozen).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert_eq!(d, 0.0, "{mode:?}");
    }
}

#[test]
fn stored_cleaner_reloads_identically() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 6).unwrap();
    let cfg = AdapterConfig::for_encoder(&enc.config, 8);
    let data = tiny_pairs(1, 4);
    let dir = tempfile::tempdir().unwrap();
    let wave = speech_utterance(2, 1.0);
    for mode in CleanerMode::ALL {
        let trained = train_cleaner(&data, &enc, mode, &cfg, &quick_opts(2)).unwrap().cleaner;
        let path = dir.path().join(format!("{}.safetensors", mode.name()));
        trained.params.save(&path).unwrap();
        let loaded = Cleaner::from_params(mode, &enc, &cfg, ParamStore::load(&path, 0).unwrap()).unwrap();
        let a: Vec<f32> = trained.features(&enc, &[&wave.samples]).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = loaded.features(&enc, &[&wave.samples]).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }
    let missing = Cleaner::from_params(CleanerMode::Adapter, &enc, &cfg, ParamStore::new(0));
    assert!(matches!(missing, Err(Error::MissingParam(_))));
}

#[test]
fn empty_dataset_is_rejected() {
    let enc = EncoderState::init(ConformerConfig::tiny(), 0).unwrap();
    let data = tiny_pairs(0, 0);
    let cfg = AdapterConfig::for_encoder(&enc.config, 8);
    let r = train_cleaner(&data, &enc, CleanerMode::Adapter, &cfg, &quick_opts(1));
    assert!(matches!(r, Err(Error::EmptyDataset)));
}

#[test]
fn adapter_cost_per_frame_is_flat_in_length() {
    let cfg = AdapterConfig::desk();
    let mut store = ParamStore::new(0);
    let stack = AdapterStack::new(&mut store.frozen(), &cfg, 1).unwrap();
    struct Identity;
    impl LayeredEncoder for Identity {
        fn model_dim(&self) -> usize {
            256
        }
        fn num_layers(&self) -> usize {
            1
        }
        fn tap_layer(&self) -> usize {
            1
        }
        fn layer_forward(&self, _: usize, x: &Tensor) -> Result<Tensor> {
            Ok(x.clone())
        }
    }
    let per_frame = |frames: usize| -> f64 {
        let x = Tensor::ones((1, frames, 256), DType::F32, &Device::Cpu).unwrap();
        let reps = 20_000 / frames;
        let mut best = f64::INFINITY;
        for _ in 0..7 {
            let t = std::time::Instant::now();
            for _ in 0..reps {
                adapted_layers(&Identity, &stack, &x).unwrap();
            }
            best = best.min(t.elapsed().as_secs_f64() / (reps * frames) as f64);
        }
        best
    };
    per_frame(1000);
    let (short, long) = (per_frame(100), per_frame(1000));
    let ratio = long / short;
    assert!((ratio - 1.0).abs() < 0.2, "per-frame cost ratio {ratio}");
}
