use super::*;
use crate::models::{Domain, ModelConfig, ModelError};
use crate::numerics::{std_normal_quantile, RngStream};
use proptest::prelude::*;

const U_NORMAL: f64 = 0.052_014_838_787_555_7;

fn normal_mean() -> crate::models::AnalyticModel {
    ModelConfig::NormalMean { sigma: 0.1, m: 10 }.build().unwrap()
}

/// `θ̂ = a + bθ` with no noise.
struct Linear {
    a: f64,
    b: f64,
}

impl SampleOracle for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn domain(&self) -> Domain {
        Domain::REAL_LINE
    }
    fn draw(&self, theta: f64, _rng: &mut RngStream) -> Result<f64, ModelError> {
        Ok(self.a + self.b * theta)
    }
}

/// Ignores `θ` entirely.
struct Flat;

impl SampleOracle for Flat {
    fn name(&self) -> &str {
        "flat"
    }
    fn domain(&self) -> Domain {
        Domain::REAL_LINE
    }
    fn draw(&self, _theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        Ok(rng.normal())
    }
}

fn bench_problem<'a>(oracle: &'a dyn SampleOracle, budget: usize, rep: u64) -> (SearchProblem<'a>, RngStream) {
    let base = RngStream::new(7, rep);
    let start = U_NORMAL + base.derive(0).normal();
    let problem = SearchProblem::new(oracle, 0.0, TailSpec::upper(0.05), budget, start, 1.0);
    (problem, base.derive(1))
}

fn bench_opts() -> MethodOptions {
    MethodOptions {
        brm: BrmOptions {
            prior_var: Some(1.0),
            ..BrmOptions::default()
        },
        aqr: AqrOptions {
            grid_span: Some(2.0),
            diagnostics: false,
            ..AqrOptions::default()
        },
        ..MethodOptions::default()
    }
}

#[test]
fn closed_form_endpoint_constant() {
    let z = std_normal_quantile(0.95).unwrap();
    assert!((z * 0.1 / 10f64.sqrt() - U_NORMAL).abs() < 1e-12);
}

#[test]
fn tail_spec_levels() {
    assert_eq!(TailSpec::upper(0.05).tau(), 0.05);
    assert_eq!(TailSpec::lower(0.05).tau(), 0.95);
    assert!(TailSpec::new(0.5, Side::Upper).is_err());
    assert!(TailSpec::new(0.0, Side::Upper).is_err());
}

#[test]
fn rm_step_arithmetic() {
    assert!((rm_step(1.0, 2.0, 0.05, 10, true) - 0.99).abs() < 1e-15);
    assert!((rm_step(1.0, 2.0, 0.05, 10, false) - 1.19).abs() < 1e-15);
}

#[test]
fn rm_ties_step_up() {
    // Every draw equals the observed estimate, so every step goes up.
    let oracle = Linear { a: 0.0, b: 0.0 };
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 12, 1.0, 1.0);
    let r = rm_search(&p, &RmOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    let th = r.ledger.thetas();
    assert!(th.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn rm_steps_follow_indicator() {
    let oracle = normal_mean();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 60, 0.3, 1.0);
    let r = rm_search(&p, &RmOptions::default(), &mut RngStream::new(3, 0)).unwrap();
    let e = r.ledger.entries();
    let k = rm::step_scale(0.05);
    for (i, w) in e.windows(2).enumerate() {
        let c = (2.0 * k * w[0].theta.abs()).max(1e-6 * 0.3);
        let expect = rm_step(w[0].theta, c, 0.05, i + 1, w[0].estimate > 0.0);
        assert!((w[1].theta - expect).abs() < 1e-14);
        assert_eq!(w[1].theta < w[0].theta, w[0].estimate > 0.0);
    }
}

fn production_problem<'a>(oracle: &'a dyn SampleOracle, iterations: usize, rep: u64) -> (SearchProblem<'a>, RngStream) {
    let mut rng = RngStream::new(17, rep);
    let s = production_start(oracle, 0.0, PILOT_DRAWS, &mut rng).unwrap();
    let mut p = SearchProblem::new(oracle, 0.0, TailSpec::upper(0.05), iterations + PILOT_DRAWS, s.upper_start, s.scale);
    p.prior = s.ledger;
    (p, rng)
}

#[test]
fn rm_converges_on_normal_mean() {
    let oracle = normal_mean();
    let hits = (0..300)
        .filter(|&rep| {
            let (p, mut rng) = production_problem(&oracle, 500, rep);
            let r = rm_search(&p, &RmOptions::default(), &mut rng).unwrap();
            assert_eq!(r.draws_used, 520);
            (r.endpoint - U_NORMAL).abs() < 0.02
        })
        .count();
    assert!(hits >= 285, "{hits} of 300 within 0.02");
}

/// Φ(x) by composite Simpson integration of the density from zero.
fn simpson_cdf(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = f(0.0) + f(x);
    for j in 1..n {
        acc += if j % 2 == 1 { 4.0 } else { 2.0 } * f(j as f64 * h);
    }
    0.5 + acc * h / 3.0
}

#[test]
fn brm_first_coefficients() {
    let seq = brm_sequence(0.975, 1.0, 1);
    let (b, c, v) = seq[0];
    assert_eq!(v, 1.0);
    let z = std_normal_quantile(0.975).unwrap() / 2f64.sqrt();
    let b_oracle = simpson_cdf(z);
    let c_oracle = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() / 2f64.sqrt();
    assert!((b - b_oracle).abs() < 1e-12, "b1 = {b} vs {b_oracle}");
    assert!((c - c_oracle).abs() < 1e-12, "c1 = {c} vs {c_oracle}");
    // Frozen from the oracle above.
    assert!((b - 0.917_111_865).abs() < 1e-8);
    assert!((c - 0.107_972_702).abs() < 1e-8);
}

#[test]
fn brm_sequence_is_monotone() {
    for &target in &[0.95, 0.975, 0.9] {
        let seq = brm_sequence(target, 1.0, 200);
        for w in seq.windows(2) {
            assert!(w[1].0 > w[0].0, "b not increasing");
            assert!(w[1].2 < w[0].2, "v not decreasing");
            assert!(w[1].0 < target);
        }
        assert!(seq[0].0 > 0.5);
        assert!(target - seq[199].0 < target - seq[0].0);
    }
    // Mirror image below one half.
    let seq = brm_sequence(0.05, 1.0, 50);
    assert!(seq.windows(2).all(|w| w[1].0 < w[0].0 && w[1].0 > 0.05));
}

#[test]
fn brm_lands_near_endpoint() {
    let oracle = normal_mean();
    let mut errs: Vec<f64> = (0..100)
        .map(|rep| {
            let (p, mut rng) = bench_problem(&oracle, 400, rep);
            let r = brm_search(&p, &bench_opts().brm, &mut rng).unwrap();
            (r.endpoint - U_NORMAL).abs()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    assert!(errs[50] < 0.02, "median error {}", errs[50]);
}

#[test]
fn grid_interpolation_arithmetic() {
    assert_eq!(grid::interpolate(&[0.0, 1.0], &[1.0, 3.0], 2.0), Some(0.5));
    assert_eq!(grid::interpolate(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], 3.0), Some(1.0));
    assert_eq!(grid::interpolate(&[0.0, 1.0], &[1.0, 3.0], 4.0), None);
}

#[test]
fn grid_converges_with_large_b() {
    let oracle = normal_mean();
    let grid: Vec<f64> = (0..11).map(|j| j as f64 * 0.01).collect();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 11 * 20_000, 0.05, 0.03);
    let r = grid_search(&p, &grid, 20_000, &mut RngStream::new(11, 0)).unwrap();
    assert!((r.endpoint - U_NORMAL).abs() < 2e-3, "{}", r.endpoint);
    assert_eq!(r.draws_used, 11 * 20_000);
}

#[test]
fn grid_bracket_error() {
    let oracle = normal_mean();
    let grid = [1.0, 2.0, 3.0];
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 300, 2.0, 1.0);
    let err = grid_search(&p, &grid, 100, &mut RngStream::new(1, 0)).unwrap_err();
    assert!(matches!(err, SearchError::Bracket { .. }));
    assert!(grid_search(&p, &grid, 101, &mut RngStream::new(1, 0)).is_err());
}

#[test]
fn grid_lower_endpoint() {
    let oracle = normal_mean();
    let grid: Vec<f64> = (0..11).map(|j| -0.1 + j as f64 * 0.01).collect();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::lower(0.05), 11 * 20_000, -0.05, 0.03);
    let r = grid_search(&p, &grid, 20_000, &mut RngStream::new(12, 0)).unwrap();
    assert_eq!(r.side, Side::Lower);
    assert!((r.endpoint + U_NORMAL).abs() < 2e-3, "{}", r.endpoint);
    assert!(r.ledger.thetas().iter().all(|t| *t <= 0.0));
}

#[test]
fn aqr_centering_arithmetic() {
    assert_eq!(aqr::centering_proposal(2.0, 6.0, 4), 4.0);
}

#[test]
fn aqr_exact_on_noiseless_line() {
    let oracle = Linear { a: 1.0, b: 2.0 };
    let p = SearchProblem::new(&oracle, 5.0, TailSpec::upper(0.05), 30, 1.5, 0.5);
    let r = aqr_search(&p, &AqrOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    assert!((r.endpoint - 2.0).abs() < 1e-12);
    // Every proposal after the first lands where the design mean stays at 2.
    let th = r.ledger.thetas();
    for n in 11..=th.len() {
        let mean = th[..n].iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 1e-9, "mean after {n} draws = {mean}");
    }
    assert!(!r.warnings.contains(Warning::ReflectionFallback));
    assert!(!r.warnings.contains(Warning::TrustRegion));
}

#[test]
fn aqr_design_mean_tracks_iterate() {
    // On a noisy oracle the design mean after each unclamped proposal must
    // equal the endpoint the fit on the preceding draws implied.
    let oracle = normal_mean();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 40, 0.1, 0.05);
    let opts = AqrOptions {
        diagnostics: false,
        ..AqrOptions::default()
    };
    let r = aqr_search(&p, &opts, &mut RngStream::new(5, 0)).unwrap();
    let xs = r.ledger.thetas();
    let ys = r.ledger.estimates();
    let mut prev: Option<crate::quantreg::QuantileFit<f64>> = None;
    for n in 10..xs.len() {
        let fopts = crate::quantreg::FitOptions {
            previous_slope: prev.as_ref().map(|f| f.slope()),
            warm_basis: prev.as_ref().map(|f| f.basis.clone()),
            ..Default::default()
        };
        let f = crate::quantreg::fit_quantile_line(&xs[..n], &ys[..n], 0.05, &fopts).unwrap();
        let u = crate::quantreg::invert_fit_for_endpoint(&f, 0.0).unwrap();
        let mean = xs[..=n].iter().sum::<f64>() / (n + 1) as f64;
        let (lo, hi) = xs[..n]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if (xs[n] - u).abs() < 3.0 * (hi - lo) {
            assert!((mean - u).abs() < 1e-9, "draw {n}: mean {mean} vs {u}");
        }
        prev = Some(f);
    }
}

#[test]
fn aqr_non_invertible_fails_with_last_iterate() {
    let p = SearchProblem::new(&Flat, 0.0, TailSpec::upper(0.05), 40, 1.0, 1e-6);
    let err = aqr_search(&p, &AqrOptions::default(), &mut RngStream::new(1, 0)).unwrap_err();
    assert!(matches!(err, SearchError::NonInvertible { .. }) || matches!(err, SearchError::Bracket { .. }));
    assert!(err.last_iterate().is_some());
}

#[test]
fn aqr_reports_band_and_linearity() {
    let oracle = normal_mean();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 100, 0.1, 0.05);
    let r = aqr_search(&p, &AqrOptions::default(), &mut RngStream::new(9, 0)).unwrap();
    let band = r.band.expect("band");
    assert!(band.lower <= band.estimate && band.estimate <= band.upper);
    assert!((band.estimate - r.endpoint).abs() < 1e-12);
    assert!(r.linearity.is_some());
}

#[test]
fn clamps_abort_after_three() {
    let oracle = ModelConfig::BinomialP { n: 30 }.build().unwrap();
    // Observed estimate of one sits on the boundary: every draw at θ < 1 is
    // at most one, so RM keeps stepping up out of [0, 1].
    let p = SearchProblem::new(&oracle, 1.0, TailSpec::upper(0.05), 50, 0.9, 0.1);
    let err = rm_search(&p, &RmOptions::default(), &mut RngStream::new(1, 0)).unwrap_err();
    match err {
        SearchError::Bracket { last, .. } => assert_eq!(last, 1.0),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn overshoots_toward_an_interior_center_do_not_abort() {
    let d = Domain::new(0.0, 1.0);
    let mut w = Warnings::default();
    let mut g = ClampGuard::default();
    for _ in 0..5 {
        assert_eq!(g.apply_toward(-0.4, 0.2, &d, &mut w).unwrap(), 0.0);
    }
    for _ in 0..2 {
        g.apply_toward(-0.4, -0.1, &d, &mut w).unwrap();
    }
    assert!(matches!(
        g.apply_toward(-0.4, -0.1, &d, &mut w),
        Err(SearchError::Bracket { .. })
    ));
}

#[test]
fn hull_root_on_linear_pilot() {
    let oracle = Linear { a: 1.0, b: 2.0 };
    let p = SearchProblem::new(&oracle, 5.0, TailSpec::upper(0.05), 40, 1.5, 1.0);
    let r = hot_started_search(&p, InnerMethod::Rm, &MethodOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    let e = r.ledger.entries();
    assert_eq!(e.iter().filter(|x| x.provenance == Provenance::Pilot).count(), 20);
    // First RM draw is the inverted start, which is the linear inversion.
    let first_rm = e.iter().find(|x| x.provenance == Provenance::RmPath).unwrap();
    assert!((first_rm.theta - 2.0).abs() < 1e-9, "{}", first_rm.theta);
    assert!(!r.linearity.unwrap().nonlinear);
}

#[test]
fn hot_start_stays_in_hull() {
    let oracle = ModelConfig::HeteroNormal {
        variant: crate::models::HeteroVariant::Parabolic,
    }
    .build()
    .unwrap();
    for rep in 0..50 {
        let p = SearchProblem::new(&oracle, 2.0, TailSpec::upper(0.05), 30, 3.0, 1.0);
        let r = hot_started_search(&p, InnerMethod::Brm, &MethodOptions::default(), &mut RngStream::new(2, rep)).unwrap();
        let pilots: Vec<f64> = r
            .ledger
            .entries()
            .iter()
            .filter(|x| x.provenance == Provenance::Pilot)
            .map(|x| x.theta)
            .collect();
        let first = r
            .ledger
            .entries()
            .iter()
            .find(|x| x.provenance == Provenance::BrmPath)
            .unwrap()
            .theta;
        let lo = pilots.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pilots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(first >= lo && first <= hi);
        assert_eq!(r.draws_used, 30);
    }
}

#[test]
fn every_method_spends_the_budget() {
    let oracle = normal_mean();
    for method in Method::ALL {
        let (p, mut rng) = bench_problem(&oracle, 60, 4);
        let mut opts = bench_opts();
        opts.grid_span = Some(3.0);
        match run_search(&p, method, &opts, &mut rng) {
            Ok(r) => {
                assert_eq!(r.draws_used, r.ledger.len());
                assert!(r.draws_used <= 60);
                if method != Method::Grid {
                    assert_eq!(r.draws_used, 60, "{method}");
                }
            }
            Err(e) => panic!("{method}: {e}"),
        }
    }
}

#[test]
fn searches_are_deterministic() {
    let oracle = normal_mean();
    for method in [Method::Rm, Method::Brm, Method::Aqr, Method::HotRm] {
        let (p, mut a) = bench_problem(&oracle, 50, 9);
        let mut b = a.clone();
        let ra = run_search(&p, method, &bench_opts(), &mut a).unwrap();
        let rb = run_search(&p, method, &bench_opts(), &mut b).unwrap();
        assert_eq!(ra, rb);
    }
}

#[test]
fn production_start_uses_pilot_scale() {
    let oracle = normal_mean();
    let s = production_start(&oracle, 0.0, PILOT_DRAWS, &mut RngStream::new(3, 0)).unwrap();
    assert_eq!(s.ledger.len(), 20);
    // Robust scale estimates σ/√m ≈ 0.0316.
    assert!(s.scale > 0.015 && s.scale < 0.05, "{}", s.scale);
    assert!((s.upper_start - 2.0 * s.scale).abs() < 1e-15);
    assert!((s.lower_start + 2.0 * s.scale).abs() < 1e-15);
}

#[test]
fn lower_endpoint_mirrors_upper() {
    let oracle = normal_mean();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::lower(0.05), 200, -0.1, 0.05);
    let r = aqr_search(&p, &AqrOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    assert!((r.endpoint + U_NORMAL).abs() < 0.015, "{}", r.endpoint);
    let band = r.band.unwrap();
    assert!(band.lower <= r.endpoint && r.endpoint <= band.upper);
    // The same search written out by hand on the mirrored oracle.
    let mirrored = crate::models::Mirrored(&oracle);
    let q = SearchProblem::new(&mirrored, 0.0, TailSpec::upper(0.05), 200, 0.1, 0.05);
    let u = aqr_search(&q, &AqrOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    assert_eq!(u.endpoint, -r.endpoint);
    assert_eq!(u.ledger.mirrored(), r.ledger);
}

#[test]
fn two_sided_symmetric_location() {
    let oracle = normal_mean();
    let mut sum = 0.0;
    let mut width = 0.0;
    let runs = 300;
    for rep in 0..runs {
        let mut rng = RngStream::new(21, rep);
        let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 100, 0.1, 0.05);
        let ci = two_sided_interval(&p, Method::Aqr, 0.1, None, &MethodOptions::default(), &mut rng).unwrap();
        assert!(ci.lower.endpoint < ci.upper.endpoint);
        assert_eq!(ci.draws_used, 100);
        sum += ci.lower.endpoint + ci.upper.endpoint;
        width += ci.upper.endpoint - ci.lower.endpoint;
    }
    let mean_asym = sum / runs as f64;
    let mean_width = width / runs as f64;
    assert!(mean_asym.abs() < 0.005, "mean L + U = {mean_asym}");
    assert!((mean_width - 2.0 * U_NORMAL).abs() < 0.01, "width {mean_width}");
}

#[test]
fn two_sided_aqr_shares_draws() {
    let oracle = normal_mean();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 100, 0.1, 0.05);
    let ci = two_sided_interval(&p, Method::Aqr, 0.1, None, &MethodOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    // The lower search saw 100 draws but only 50 were new.
    assert_eq!(ci.upper.ledger.len(), 50);
    assert_eq!(ci.lower.ledger.len(), 100);
    assert!(ci.draws_used < ci.upper.ledger.len() + ci.lower.ledger.len());
    assert_eq!(ci.lower.ledger.entries()[..50], ci.upper.ledger.entries()[..]);
}

#[test]
fn two_sided_rm_independent_halves() {
    let oracle = normal_mean();
    let p = SearchProblem::new(&oracle, 0.0, TailSpec::upper(0.05), 100, 0.1, 0.05);
    let ci = two_sided_interval(&p, Method::Rm, 0.1, None, &MethodOptions::default(), &mut RngStream::new(1, 0)).unwrap();
    assert_eq!(ci.upper.draws_used, 50);
    assert_eq!(ci.lower.draws_used, 50);
    assert_eq!(ci.draws_used, 100);
    assert!(ci.lower.ledger.thetas()[0] == -0.1);
}

#[test]
fn error_reports_last_iterate() {
    let e = SearchError::NonInvertible { last: 2.5 };
    assert_eq!(e.last_iterate(), Some(2.5));
    assert_eq!(SearchError::InvalidProblem("x".into()).last_iterate(), None);
}

#[test]
fn median_error_shrinks_with_budget() {
    let oracle = normal_mean();
    for method in [Method::Grid, Method::Rm, Method::Brm, Method::Aqr] {
        let median = |budget: usize| {
            let mut errs: Vec<f64> = (0..300)
                .map(|rep| {
                    let (p, mut rng) = bench_problem(&oracle, budget, rep);
                    let mut opts = bench_opts();
                    opts.grid_span = Some(4.0);
                    match run_search(&p, method, &opts, &mut rng) {
                        Ok(r) => (r.endpoint - U_NORMAL).abs(),
                        Err(e) => (e.last_iterate().unwrap_or(p.start) - U_NORMAL).abs(),
                    }
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            0.5 * (errs[149] + errs[150])
        };
        let (m40, m400) = (median(40), median(400));
        assert!(m400 < m40, "{method}: {m40} -> {m400}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_rm_step_sign(u in -5.0..5.0f64, c in 1e-3..10.0f64, i in 1usize..500, alpha in 0.01..0.49f64, up in any::<bool>()) {
        let next = rm_step(u, c, alpha, i, up);
        let mag = if up { c * alpha / i as f64 } else { c * (1.0 - alpha) / i as f64 };
        prop_assert_eq!(next < u, up);
        prop_assert!(((next - u).abs() - mag).abs() <= 1e-12 * (1.0 + u.abs()));
    }

    #[test]
    fn prop_budget_and_domain(seed in 0u64..1000, budget in 12usize..60, method_ix in 1usize..6) {
        let oracle = ModelConfig::BinomialP { n: 30 }.build().unwrap();
        let method = Method::ALL[method_ix];
        let p = SearchProblem::new(&oracle, 0.5, TailSpec::upper(0.05), budget.max(32), 0.6, 0.1);
        let mut opts = MethodOptions::default();
        opts.aqr.diagnostics = false;
        if let Ok(r) = run_search(&p, method, &opts, &mut RngStream::new(seed, 0)) {
            prop_assert_eq!(r.draws_used, r.ledger.len());
            prop_assert!(r.draws_used <= p.budget);
            prop_assert!(oracle.domain().contains(r.endpoint));
        }
    }
}
