#[path = "support/oracles.rs"]
mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resyn_core::degradation::*;
use resyn_core::signal::{write_wav, WavEncoding};
use resyn_core::synth::{noise_bank, speech_utterance};
use resyn_core::Waveform;

fn random_room(rng: &mut ChaCha8Rng, max_order: u32) -> RoomSpec {
    let dims = [0, 1, 2].map(|_| rng.random_range(3.0..10.0));
    let pos = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|i| rng.random_range(0.5..dims[i] - 0.5));
    let source = pos(rng);
    let mic = pos(rng);
    RoomSpec {
        dimensions: dims,
        absorption: [0; 6].map(|_| rng.random_range(0.1..0.9)),
        source_pos: source,
        mic_pos: mic,
        max_order,
        speed_of_sound: 343.0,
    }
}

#[test]
fn image_sources_match_mirroring_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let room = random_room(&mut rng, case % 3);
        let mut got = image_sources(&room, 16000).unwrap();
        let mut want: Vec<(f64, f64)> = oracles::mirrored_images(room.dimensions, room.source_pos, room.max_order)
            .iter()
            .map(|img| {
                let (d, a) = oracles::oracle_amplitude(img, &room.absorption, room.mic_pos);
                (d / 343.0 * 16000.0, a)
            })
            .collect();
        assert_eq!(got.len(), want.len(), "case {case}");
        got.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        want.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (g, (delay, amp)) in got.iter().zip(&want) {
            assert!((g.delay - delay).abs() < 1e-9, "case {case}");
            assert!((g.amplitude - amp).abs() <= 1e-6 * amp.abs(), "case {case}");
        }

        let rir = generate_rir(&room, 16000).unwrap();
        let rendered = oracles::render_rir(&want, rir.len());
        let peak = rendered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in rir.samples.iter().zip(&rendered) {
            assert!((*a as f64 - b).abs() <= 1e-6 * peak, "case {case}");
        }
    }
}

#[test]
fn first_order_box_has_seven_oracle_arrivals() {
    let room = RoomSpec::uniform([5.0, 4.0, 3.0], 0.4, [1.0, 1.5, 1.2], [3.5, 2.5, 1.8], 1);
    assert_eq!(oracles::mirrored_images(room.dimensions, room.source_pos, 1).len(), 7);
    assert_eq!(image_sources(&room, 16000).unwrap().len(), 7);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// Decay is read from the first 10 dB of the Schroeder curve: an order-limited
// image set stops well before a -25 dB point of the physical decay exists.
fn median_edt(order: u32) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = [6.0, 5.0, 4.0];
    let mut sabine = 0.0;
    let times = (0..20)
        .map(|_| {
            let pos = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|i| rng.random_range(0.5..dims[i] - 0.5));
            let room = RoomSpec::uniform(dims, 0.3, pos(&mut rng), pos(&mut rng), order);
            sabine = room.sabine_t60();
            let rir = generate_rir(&room, 16000).unwrap();
            decay_time(&rir.samples, 16000, 0.0, -10.0).unwrap()
        })
        .collect();
    (median(times), sabine)
}

#[test]
fn order_six_decay_within_thirty_percent_of_sabine() {
    let (t60, sabine) = median_edt(6);
    assert!((sabine - 0.161 * 120.0 / (0.3 * 148.0)).abs() < 1e-12);
    assert!((t60 - sabine).abs() <= 0.3 * sabine, "{t60} vs {sabine}");
}

#[test]
fn deep_image_set_decay_tracks_sabine() {
    let (t60, sabine) = median_edt(10);
    assert!((t60 - sabine).abs() <= 0.1 * sabine, "{t60} vs {sabine}");
}

#[test]
fn snr_is_exact_for_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..100 {
        let speech = speech_utterance(k, 0.5);
        let noise: Vec<f32> = (0..rng.random_range(2000..12000)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise = Waveform::from_samples(noise);
        let snr = rng.random_range(5.0..30.0);
        let m = mix_at_snr(&speech, &noise, snr, true).unwrap();
        let fitted = fit_noise(&noise.samples, speech.len());
        let scaled: Vec<f64> = fitted.iter().map(|&v| v as f64 * m.noise_gain).collect();
        let measured = oracles::snr_db(&speech.samples, &scaled);
        assert!((measured - snr).abs() < 1e-4, "{measured} vs {snr}");
        // the mixture really is speech + scaled noise
        for i in (0..speech.len()).step_by(97) {
            assert!((m.mixture.samples[i] as f64 - speech.samples[i] as f64 - scaled[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn strict_range_rejects_out_of_band_snr() {
    let s = speech_utterance(1, 0.3);
    let n = Waveform::from_samples((0..4800).map(|i| ((i * 37) % 101) as f32 / 101.0 - 0.5).collect());
    assert!(mix_at_snr(&s, &n, 4.0, true).is_err());
    assert!(mix_at_snr(&s, &n, 30.5, true).is_err());
    assert!(mix_at_snr(&s, &n, 5.0, true).is_ok());
    assert!(mix_at_snr(&s, &n, 4.0, false).is_ok());
}

#[test]
fn mulaw_matches_scalar_companding_oracle() {
    let ramp = Waveform::from_samples((0..4001).map(|i| -1.0 + 2.0 * i as f32 / 4000.0).collect());
    let out = apply_codec(&ramp, CodecKind::Mulaw8, 0).unwrap();
    for (x, y) in ramp.samples.iter().zip(&out.samples) {
        let want = oracles::mulaw_round_trip(*x as f64);
        assert!((*y as f64 - want).abs() < 1e-6, "{x}");
        assert!((*y as f64 - *x as f64).abs() <= oracles::mulaw_max_error(*x as f64) + 1e-6, "{x}");
    }
}

#[test]
fn degrade_is_byte_identical_across_runs() {
    let bank = noise_bank(5, 1, 2.0).unwrap();
    let clean = speech_utterance(11, 1.5);
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..8 {
        let recipe = sample_recipe(seed, &bank, &RoomSampler::default()).unwrap();
        let mut bytes = Vec::new();
        for run in 0..2 {
            let pair = degrade(&clean, &recipe, &bank).unwrap();
            let p = dir.path().join(format!("{seed}_{run}.wav"));
            write_wav(&p, &pair.noisy, WavEncoding::Float32).unwrap();
            bytes.push(std::fs::read(&p).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}

#[test]
fn reverberant_noisy_is_aligned_with_dry_target() {
    // broadband probe: voiced speech would also correlate at its pitch period
    let bank = noise_bank(5, 1, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let clean = Waveform::from_samples((0..24000).map(|_| rng.random_range(-0.2..0.2)).collect());
    let rooms = RoomSampler::default();
    let mut checked = 0;
    for seed in 0..200u64 {
        let mut recipe = sample_recipe(seed, &bank, &rooms).unwrap();
        if !recipe.apply_reverb {
            continue;
        }
        recipe.snr_db = 30.0;
        let pair = degrade(&clean, &recipe, &bank).unwrap();
        let lag = oracles::xcorr_peak_lag(&pair.clean.samples, &pair.noisy.samples, 200);
        assert!(lag.abs() <= 1, "seed {seed}: lag {lag}");
        checked += 1;
        if checked == 5 {
            break;
        }
    }
    assert_eq!(checked, 5);
}
