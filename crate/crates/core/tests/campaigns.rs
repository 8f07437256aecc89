use rayon::prelude::*;

use tsfreq::harness::{point_seed, run_pipeline, sweep, PipelineConfig, SweepConfig};
use tsfreq::transfer_sim::{run_simulation, DatapathConfig, SimOptions};

#[test]
fn ten_minutes_lossless_over_a_hundred_seeds() {
    let lossless = (0..100u64)
        .into_par_iter()
        .filter(|&seed| {
            let cfg = DatapathConfig { seed: point_seed(99, seed), ..DatapathConfig::default() };
            let r = run_simulation(&cfg, 600.0, &SimOptions::default()).unwrap();
            assert!(r.conservation_ok);
            r.lost_bytes == 0.0
        })
        .count();
    assert!(lossless >= 99, "{lossless}/100");
}

#[test]
fn noisy_sweep_is_order_independent() {
    let cfg = SweepConfig {
        f_start: 500e6,
        f_stop: 800e6,
        f_step: 50e6,
        frames_per_point: 20,
        snr_db: Some(25.0),
        seed: 3,
        ..SweepConfig::default()
    };
    let parallel = sweep(&cfg).unwrap();
    // Same points computed one at a time, in reverse.
    let mut serial: Vec<_> = cfg
        .frequencies()
        .iter()
        .enumerate()
        .rev()
        .map(|(i, &f)| {
            let mut p = cfg.pipeline.clone();
            p.stimulus.carrier_freq = f;
            p.stimulus.snr_db = cfg.snr_db;
            p.stimulus.amplitude_fullscale_fraction = cfg.amplitude_fraction;
            p.stimulus.seed = point_seed(cfg.seed, i as u64);
            p.stimulus.n_pulses = cfg.frames_per_point + 1;
            let run = run_pipeline(&p).unwrap();
            run.estimates[..cfg.frames_per_point].iter().map(|e| e.freq_hz).collect::<Vec<_>>()
        })
        .collect();
    serial.reverse();
    for (point, freqs) in parallel.points.iter().zip(&serial) {
        let mean = freqs.iter().sum::<f64>() / freqs.len() as f64;
        assert_eq!(point.mean_est, mean);
        assert_eq!(point.range, tsfreq::harness::range(freqs));
    }
}

#[test]
fn estimates_account_for_every_frame() {
    for snr in [None, Some(20.0)] {
        let mut cfg = PipelineConfig::default();
        cfg.stimulus.snr_db = snr;
        cfg.stimulus.seed = 8;
        let run = run_pipeline(&cfg).unwrap();
        assert_eq!(run.estimates.len() + run.frames_dropped, run.frames_total);
        assert!(run.estimates.len() >= 99);
        let period = run.period.unwrap();
        assert!((period - cfg.stimulus.period_samples()).abs() < 0.2, "{period}");
    }
}
