use hetnet_core::workload::*;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn trace_from(rates: &[(f64, f64)], epochs_per_period: usize) -> WorkloadTrace {
    WorkloadTrace {
        station: "s".into(),
        role: Role::Candidate,
        epochs: rates
            .iter()
            .flat_map(|&(up, down)| std::iter::repeat_n(RatePair { up, down }, epochs_per_period))
            .collect(),
        epochs_per_period,
        epoch_duration: 1.0,
        phy_efficiency: 1.0,
    }
}

/// E[min(Y, cap)] for Y log-normal with the given log parameters.
fn clipped_lognormal_mean(log_mean: f64, log_sd: f64, cap: f64) -> f64 {
    let z = Normal::standard();
    let a = (cap.ln() - log_mean) / log_sd;
    (log_mean + log_sd * log_sd / 2.0).exp() * z.cdf(a - log_sd) + cap * (1.0 - z.cdf(a))
}

#[test]
fn default_ensemble_shape() {
    let cfg = TraceEnsembleConfig::default();
    let traces = generate_ensemble(&cfg, 1).unwrap();
    assert_eq!(traces.len(), 8);
    for t in &traces {
        assert_eq!(t.epochs.len(), 100);
        assert_eq!(t.n_periods(), 10);
        for chunk in t.epochs.chunks(10) {
            assert!(chunk.iter().all(|e| *e == chunk[0]));
        }
    }
    assert_eq!(traces.iter().filter(|t| t.role == Role::Candidate).count(), 4);
}

#[test]
fn candidate_to_background_load_ratio() {
    let cfg = TraceEnsembleConfig::default();
    let (mut cand, mut back) = (0.0, 0.0);
    for seed in 0..1000 {
        for t in generate_ensemble(&cfg, seed).unwrap() {
            let load: f64 = t.period_rates().iter().map(|r| r.total()).sum();
            match t.role {
                Role::Candidate => cand += load,
                Role::Background => back += load,
            }
        }
    }
    let ratio = cand / back;
    let expect = |p: LogNormalParams, f: f64| clipped_lognormal_mean(p.log_mean + f.ln(), p.log_sd, cfg.rate_cap);
    let oracle = (expect(cfg.up, 0.8) + expect(cfg.down, 0.8)) / (expect(cfg.up, 1.0) + expect(cfg.down, 1.0));
    assert!((oracle - 0.8).abs() < 0.02, "analytic ratio {oracle}");
    assert!((ratio - oracle).abs() < 0.01, "simulated {ratio} vs analytic {oracle}");
    assert!((ratio - 0.8).abs() < 0.02);
}

#[test]
fn smoothing_hand_example() {
    let t = trace_from(&[(10.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)], 2);
    let s = smooth_trace(&t, 5).unwrap();
    let got: Vec<f64> = s.period_rates().iter().map(|r| r.up).collect();
    let want = [10.0, 5.0, 10.0 / 3.0, 2.5, 2.0];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert!(smooth_trace(&t, 0).is_err());
}

#[test]
fn bad_distribution_rejected() {
    let mut cfg = TraceEnsembleConfig::default();
    cfg.up.log_sd = 0.0;
    assert!(generate_ensemble(&cfg, 0).is_err());
}

fn rates() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..15)
}

proptest! {
    #[test]
    fn generated_rates_respect_cap(seed in any::<u64>(), cap in 1.0f64..200.0, factor in 0.05f64..=1.0) {
        let cfg = TraceEnsembleConfig { rate_cap: cap, candidate_load_factor: factor, ..Default::default() };
        let a = generate_ensemble(&cfg, seed).unwrap();
        for t in &a {
            prop_assert!(t.epochs.iter().all(|r| (0.0..=cap).contains(&r.up) && (0.0..=cap).contains(&r.down)));
            prop_assert_eq!(t.epochs.len() % t.epochs_per_period, 0);
        }
        prop_assert_eq!(a, generate_ensemble(&cfg, seed).unwrap());
    }

    #[test]
    fn smoothing_fixes_constant_traces(level in 0.0f64..100.0, n in 1usize..12, window in 1usize..8) {
        let t = trace_from(&vec![(level, level / 2.0); n], 3);
        let s = smooth_trace(&t, window).unwrap();
        for r in s.period_rates() {
            prop_assert!((r.up - level).abs() <= 1e-12 * level.max(1.0));
            prop_assert!((r.down - level / 2.0).abs() <= 1e-12 * level.max(1.0));
        }
    }

    #[test]
    fn smoothing_window_one_is_identity(r in rates()) {
        let t = trace_from(&r, 2);
        prop_assert_eq!(smooth_trace(&t, 1).unwrap(), t);
    }

    #[test]
    fn smoothing_commutes_with_scaling(r in rates(), window in 1usize..8, c in 0.01f64..10.0) {
        let t = trace_from(&r, 2);
        let scaled: Vec<(f64, f64)> = r.iter().map(|&(u, d)| (u * c, d * c)).collect();
        let a = smooth_trace(&trace_from(&scaled, 2), window).unwrap();
        let b = smooth_trace(&t, window).unwrap();
        for (x, y) in a.epochs.iter().zip(&b.epochs) {
            prop_assert!((x.up - c * y.up).abs() <= 1e-12 * (1.0 + c * 100.0));
            prop_assert!((x.down - c * y.down).abs() <= 1e-12 * (1.0 + c * 100.0));
        }
        let periods = b.period_rates();
        for chunk in b.epochs.chunks(2).zip(&periods) {
            prop_assert!(chunk.0.iter().all(|e| e == chunk.1));
        }
    }
}
