use hetnet_core::alignment::*;
use hetnet_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn square() -> SearchRect {
    SearchRect::new((2.0, 2.0), 4.0, 4.0).unwrap()
}

/// Heat of every lattice node, computed independently of the library.
fn brute_force_epicenter(points: &[(f64, f64)], rtts: &[f64], rect: &SearchRect, n: usize, bw: f64) -> (f64, f64) {
    let max = rtts.iter().cloned().fold(f64::MIN, f64::max);
    let raw: Vec<f64> = rtts.iter().map(|r| max - r).collect();
    let sum: f64 = raw.iter().sum();
    let w: Vec<f64> = if sum > 0.0 { raw.iter().map(|v| v / sum).collect() } else { vec![1.0 / 5.0; rtts.len()] };
    let x0 = rect.center.0 - rect.width / 2.0;
    let y0 = rect.center.1 - rect.height / 2.0;
    let mut best = (f64::MIN, (0.0, 0.0));
    for r in 0..n {
        for c in 0..n {
            let g = (x0 + rect.width * c as f64 / (n - 1) as f64, y0 + rect.height * r as f64 / (n - 1) as f64);
            let mut heat = 0.0;
            for (p, wi) in points.iter().zip(&w) {
                let d2 = ((g.0 - p.0).powi(2) + (g.1 - p.1).powi(2)) / (bw * bw);
                if d2 <= 1.0 {
                    heat += wi * (1.0 - d2) * (1.0 - d2);
                }
            }
            if heat > best.0 {
                best = (heat, g);
            }
        }
    }
    best.1
}

fn close(a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
    (a.0 - b.0).hypot(a.1 - b.1) <= tol
}

#[test]
fn corner_with_half_rtt_pulls_the_epicenter() {
    let rect = square();
    let pts = rect.probe_points();
    let rtts = [2.0, 4.0, 4.0, 4.0, 4.0];
    let e = qkde_epicenter(&pts, &rtts, &rect, 33, rect.diagonal()).unwrap();
    assert!(close(e, brute_force_epicenter(&pts, &rtts, &rect, 33, rect.diagonal()), 1e-12));
    assert!(e.0 < 2.0 && e.1 < 2.0, "{e:?}");
}

#[test]
fn equal_rtts_and_single_kernel() {
    let rect = square();
    let pts = rect.probe_points();
    assert_eq!(qkde_epicenter(&pts, &[3.0; 5], &rect, 33, rect.diagonal()).unwrap(), rect.center);
    let e = qkde_epicenter(&pts, &[5.0, 5.0, 1.0, 5.0, 5.0], &rect, 33, 0.3).unwrap();
    assert_eq!(e, (4.0, 4.0));
    assert!(qkde_epicenter(&pts, &[0.0, 1.0, 1.0, 1.0, 1.0], &rect, 33, 1.0).is_err());
}

#[test]
fn centered_optimum_stops_at_once() {
    let mut f = RadialField::new((2.0, 2.0), 2.0, 1.0);
    let r = pen_tree_align(&mut f, &square(), &AlignConfig::default()).unwrap();
    assert_eq!((r.iterations, r.probes, r.position), (1, 5, (2.0, 2.0)));
}

#[test]
fn planted_optima_match_dense_grid_search() {
    let rect0 = square();
    let mut g = rng::seeded(8);
    let mut hits = 0;
    for _ in 0..100 {
        let opt = (g.random_range(0.0..4.0), g.random_range(0.0..4.0));
        let mut f = RadialField::new(opt, 2.0, 1.0);
        let oracle = rect0
            .lattice(401)
            .into_iter()
            .min_by(|a, b| f.noiseless_rtt(a.0, a.1).total_cmp(&f.noiseless_rtt(b.0, b.1)))
            .unwrap();
        let r = pen_tree_align(&mut f, &rect0, &AlignConfig::default()).unwrap();
        assert!(r.iterations <= 10 && r.probes <= 50);
        hits += close(r.position, oracle, 0.08) as usize;
    }
    assert!(hits >= 95, "{hits}/100");
}

fn rtts5() -> impl Strategy<Value = Vec<f64>> {
    // Multiples of 1/8 keep shifted differences exact.
    prop::collection::vec((1u32..400).prop_map(|v| v as f64 / 8.0), 5)
}

proptest! {
    #[test]
    fn epicenter_ignores_rtt_offset(rtts in rtts5(), shift in 0u32..80) {
        let rect = square();
        let pts = rect.probe_points();
        let shifted: Vec<f64> = rtts.iter().map(|r| r + shift as f64 / 8.0).collect();
        let a = qkde_epicenter(&pts, &rtts, &rect, 17, rect.diagonal()).unwrap();
        let b = qkde_epicenter(&pts, &shifted, &rect, 17, rect.diagonal()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn epicenter_matches_brute_force(rtts in rtts5(), n in 2usize..25) {
        let rect = square();
        let pts = rect.probe_points();
        let a = qkde_epicenter(&pts, &rtts, &rect, n, rect.diagonal()).unwrap();
        let b = brute_force_epicenter(&pts, &rtts, &rect, n, rect.diagonal());
        prop_assert!(close(a, b, 1e-12), "{:?} vs {:?}", a, b);
    }

    #[test]
    fn search_stays_inside_and_quarters(
        ox in 0.0f64..4.0, oy in 0.0f64..4.0,
        noise in 0.0f64..0.5, seed in any::<u64>(), max_iter in 1usize..12,
    ) {
        let rect0 = square();
        let mut f = RadialField::new((ox, oy), 2.0, 1.0).with_noise(noise, seed).unwrap();
        let cfg = AlignConfig { max_iter, ..Default::default() };
        let r = pen_tree_align(&mut f, &rect0, &cfg).unwrap();
        prop_assert!(r.iterations <= max_iter);
        prop_assert_eq!(r.probes, 5 * r.iterations);
        for (k, s) in r.steps.iter().enumerate() {
            prop_assert_eq!(s.rect.area(), rect0.area() / 4f64.powi(k as i32));
            for p in s.rect.probe_points() {
                prop_assert!(rect0.contains(p));
            }
            prop_assert!(s.rect.contains(s.epicenter));
        }
    }
}
