use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsfreq::distributor::{distribute, reassemble, route_two_stage, P2SConfig};
use tsfreq::fitting::{estimate, quantize_index, vertex_from_triple, VertexFormula};
use tsfreq::framing::{split_frames, SampleFrame};
use tsfreq::harness::{analyze_frames, frame_record, range, PipelineConfig};
use tsfreq::signal_gen::{acquire, StimulusConfig};
use tsfreq::spectral::{analyze_frame, dft_oracle, fft_fixed, peak_detect, FftConfig};
use tsfreq::transfer_sim::{
    run_simulation, sample_read_latency, step_catch_up, step_host_read, step_read_frame, step_write_block,
    DatapathConfig, ReadLatencyModel, SimOptions, TransferState, MIB,
};
use tsfreq::FixedPointFormat;

fn random_frame(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> Vec<i32> {
    (0..512).map(|_| rng.random_range(lo..=hi)).collect()
}

proptest! {
    #[test]
    fn quantize_is_monotone(a in -2000.0f64..2000.0, b in -2000.0f64..2000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize_index(lo).0 <= quantize_index(hi).0);
    }

    #[test]
    fn quantize_is_idempotent(x in -2047.0f64..2047.0) {
        let (raw, sat) = quantize_index(x);
        prop_assert!(!sat);
        let back = raw as f64 / 16.0;
        prop_assert_eq!(quantize_index(back), (raw, false));
        prop_assert!((back - x).abs() <= 1.0 / 32.0);
    }

    #[test]
    fn fixed_point_encode_round_trips(word in 2u32..24, frac in 0u32..8, code in any::<i32>()) {
        let fmt = FixedPointFormat::new(true, word, frac.min(word - 1)).unwrap();
        let code = (code as i64).clamp(fmt.min_code(), fmt.max_code());
        prop_assert_eq!(fmt.encode(fmt.decode(code)), (code, false));
    }

    #[test]
    fn distribute_is_lossless(n in 0usize..2000, groups in 1usize..6, subgroups in 1usize..10) {
        let cfg = P2SConfig { groups, subgroups, ..P2SConfig::default() };
        let items: Vec<usize> = (0..n).collect();
        let lanes = distribute(&cfg, items.clone());
        prop_assert_eq!(lanes.len(), groups * subgroups);
        let max = lanes.iter().map(Vec::len).max().unwrap_or(0);
        let min = lanes.iter().map(Vec::len).min().unwrap_or(0);
        prop_assert!(max - min <= 1);
        prop_assert_eq!(reassemble(&cfg, lanes), items);
    }

    #[test]
    fn routing_is_a_bijection_per_cycle(cycle in 0usize..100_000, groups in 1usize..6, subgroups in 1usize..10) {
        let cfg = P2SConfig { groups, subgroups, ..P2SConfig::default() };
        let total = cfg.total_lanes();
        let mut seen = vec![false; total];
        for i in cycle * total..(cycle + 1) * total {
            let lane = route_two_stage(&cfg, i);
            prop_assert!(!seen[lane]);
            seen[lane] = true;
        }
    }

    #[test]
    fn parabola_vertex_is_exact(a in -100.0f64..-1e-3, frac in -0.499f64..0.499, c in -50.0f64..50.0, x0 in 2usize..250) {
        let xv = x0 as f64 + frac;
        let y = |x: f64| a * (x - xv).powi(2) + c;
        let x0f = x0 as f64;
        let v = vertex_from_triple(x0f, y(x0f - 1.0), y(x0f), y(x0f + 1.0), VertexFormula::Standard);
        prop_assert!((v.x_c - xv).abs() < 1e-9, "{} vs {}", v.x_c, xv);
        prop_assert!(!v.edge_clamped);
    }

    #[test]
    fn vertex_ignores_offset_and_scale(ym in 0.0f64..100.0, y0 in 100.0f64..200.0, yp in 0.0f64..100.0, off in -1e3f64..1e3, k in 1e-3f64..1e3) {
        let base = vertex_from_triple(50.0, ym, y0, yp, VertexFormula::Standard).x_c;
        let shifted = vertex_from_triple(50.0, ym + off, y0 + off, yp + off, VertexFormula::Standard).x_c;
        let scaled = vertex_from_triple(50.0, ym * k, y0 * k, yp * k, VertexFormula::Standard).x_c;
        prop_assert!((base - shifted).abs() < 1e-9);
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn peak_detect_ignores_power_of_two_scale(mags in prop::collection::vec(0u16..4000, 3..300), k in 0u32..4) {
        let m: Vec<f32> = mags.iter().map(|&v| v as f32).collect();
        let scaled: Vec<f32> = m.iter().map(|&v| v * (1u32 << k) as f32).collect();
        let a = peak_detect(&m, 8).unwrap();
        let b = peak_detect(&scaled, 8).unwrap();
        prop_assert_eq!(a.x0, b.x0);
        prop_assert_eq!(a.flags, b.flags);
    }

    #[test]
    fn fft_is_nearly_linear(seed in any::<u64>()) {
        let cfg = FftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_frame(&mut rng, -1024, 1023);
        let b = random_frame(&mut rng, -1024, 1023);
        let sum: Vec<i32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (fa, fb, fs) = (fft_fixed(&a, &cfg).unwrap(), fft_fixed(&b, &cfg).unwrap(), fft_fixed(&sum, &cfg).unwrap());
        for k in 0..512 {
            let d = fs[k] - fa[k] - fb[k];
            // Three transforms each within two output LSB.
            prop_assert!(d.re.abs() <= 6 && d.im.abs() <= 6, "bin {k}: {d}");
        }
    }

    #[test]
    fn split_covers_signal(len in 1usize..5000, period in 1.0f64..600.0, window in 0usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<i32> = (0..len).map(|_| rng.random_range(-100..100)).collect();
        let split = split_frames(&x, period, window);
        if period <= len as f64 {
            let joined: Vec<i32> = split.frames.iter().flat_map(|f| f.samples.iter().copied()).collect();
            prop_assert_eq!(joined, x);
            for (i, f) in split.frames.iter().enumerate() {
                prop_assert_eq!(f.frame_index, i);
            }
        } else {
            prop_assert!(split.frames.is_empty());
        }
    }

    #[test]
    fn range_ignores_order(mut v in prop::collection::vec(-1e9f64..1e9, 0..100), seed in any::<u64>()) {
        let before = range(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(range(&v), before);
        prop_assert!(before >= 0.0);
    }

    #[test]
    fn step_functions_conserve(ops in prop::collection::vec(0u8..4, 1..200), latency in 0.0f64..0.05) {
        let cfg = DatapathConfig::default();
        let mut s = TransferState::default();
        for op in ops {
            s = match op {
                0 => step_write_block(&s, &cfg),
                1 => step_read_frame(&s, &cfg),
                2 => step_host_read(&s, &cfg, latency),
                _ => step_catch_up(&s, &cfg, latency).0,
            };
            prop_assert!(s.conserves(), "{s:?}");
            prop_assert!(s.fifo_fill <= cfg.fifo_capacity && s.ddr_backlog <= cfg.ddr_capacity + 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_conserves(ingest in 0.0f64..99.0, seed in any::<u64>(), duration in 0.0f64..3.0) {
        // Above 100 MiB/s the FIFO cannot cover a frame read and the config is rejected.
        let cfg = DatapathConfig { ingest_rate: ingest * MIB, seed, ..DatapathConfig::default() };
        let r = run_simulation(&cfg, duration, &SimOptions::default()).unwrap();
        prop_assert!(r.conservation_ok, "{}", r.max_conservation_error);
        prop_assert!(r.delivered_bytes <= r.produced_bytes);
    }
}

#[test]
fn fft_linearity_rarely_exceeds_two_lsb() {
    let cfg = FftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut within, mut total) = (0usize, 0usize);
    for _ in 0..500 {
        let a = random_frame(&mut rng, -1024, 1023);
        let b = random_frame(&mut rng, -1024, 1023);
        let sum: Vec<i32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (fa, fb, fs) = (fft_fixed(&a, &cfg).unwrap(), fft_fixed(&b, &cfg).unwrap(), fft_fixed(&sum, &cfg).unwrap());
        for k in 0..512 {
            let d = fs[k] - fa[k] - fb[k];
            total += 1;
            within += usize::from(d.re.abs() <= 2 && d.im.abs() <= 2);
        }
    }
    let frac = within as f64 / total as f64;
    assert!(frac >= 0.999, "{frac}");
}

#[test]
fn fft_error_per_bin_is_small() {
    let cfg = FftConfig::default();
    let scale = (1u64 << cfg.total_shift()) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let x = random_frame(&mut rng, -2048, 2047);
        let oracle = dft_oracle(&x.iter().map(|&v| v as f64).collect::<Vec<_>>());
        for (f, o) in fft_fixed(&x, &cfg).unwrap().iter().zip(&oracle) {
            let err = (Complex64::new(f.re as f64, f.im as f64) - o / scale).norm();
            assert!(err <= 2.0, "{err} output LSB");
        }
    }
}

#[test]
fn lane_parallel_analysis_matches_sequential() {
    let stim = StimulusConfig { n_pulses: 241, snr_db: Some(30.0), seed: 21, ..StimulusConfig::single_tone(1.234e9) };
    let codes = acquire(&stim).unwrap().codes;
    let (frames, _, _) = frame_record(&codes, 440).unwrap();
    assert!(frames.len() >= 240);
    let cfg = PipelineConfig { stimulus: stim, ..PipelineConfig::default() };
    let parallel = analyze_frames(&cfg, frames.clone()).unwrap();
    let sequential: Vec<_> = frames
        .iter()
        .map(|f: &SampleFrame| estimate(&analyze_frame(f, &cfg.fft).unwrap(), cfg.stimulus.sample_rate, cfg.fft.n))
        .collect();
    assert_eq!(parallel, sequential);
}

#[test]
fn latency_model_hits_its_quantiles() {
    let model = ReadLatencyModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 1_000_000;
    let draws: Vec<f64> = (0..n).map(|_| sample_read_latency(&model, &mut rng)).collect();
    let over_knee = draws.iter().filter(|&&d| d > 12e-3).count() as f64 / n as f64;
    let over_far = draws.iter().filter(|&&d| d > 100e-3).count();
    let mean = draws.iter().sum::<f64>() / n as f64;
    assert!((0.002..=0.004).contains(&over_knee), "{over_knee}");
    // 30 expected; Poisson 99.9% interval.
    assert!((13..=50).contains(&over_far), "{over_far}");
    assert!((4.5e-3..=5.5e-3).contains(&mean), "{mean}");
    assert!(draws.iter().all(|&d| d >= 2.5e-3));
}
