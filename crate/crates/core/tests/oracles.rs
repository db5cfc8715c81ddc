//! Independent reference computations checked against the library.

use groupdyn::analysis::{nested_f_test, ols_fit, wilcoxon_signed_rank, Alternative};
use groupdyn::emission::{frame_loglik, sample_observations, EmissionParams};
use groupdyn::infer::{default_prior, run_chain_from, GibbsConfig, GibbsState, LatentPath};
use groupdyn::mjp::{EventCatalog, EventKind, RateVector, StateVector};
use groupdyn::rng;
use groupdyn::segment::fit_gap_mixture;
use groupdyn::simulate::{gillespie_simulate, slot_event_distribution, slotted_simulate, trajectory_loglik};
use groupdyn::survival::{fit_hazard, SurvivalRecord};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Gamma};

fn rates(cat: &EventCatalog) -> RateVector {
    RateVector::by_kind(cat, |e| match e.kind {
        EventKind::Take => 0.3,
        EventKind::Yield => 0.4,
        EventKind::Transfer => 0.1,
        EventKind::Backchannel => 0.2,
        EventKind::Seize => 0.05,
        EventKind::YieldUnderCompetition => 0.8,
    })
    .unwrap()
}

/// Mid-ranks of |d| for the nonzero differences, by direct comparison.
fn mid_ranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

#[test]
fn wilcoxon_matches_sign_flip_enumeration() {
    let mut r = rng::seeded(3);
    for n in 5..=11 {
        for _ in 0..4 {
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let v = (r.random_range(-20..=20) as f64) / 10.0;
                    if v == 0.0 { 0.3 } else { v }
                })
                .collect();
            let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
            let ranks = mid_ranks(&abs);
            let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
            let mut ge = 0u64;
            let mut le = 0u64;
            for mask in 0u32..(1 << n) {
                let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
                ge += u64::from(w >= observed - 1e-9);
                le += u64::from(w <= observed + 1e-9);
            }
            let total = (1u64 << n) as f64;
            let greater = wilcoxon_signed_rank(&d, Alternative::Greater).unwrap();
            let less = wilcoxon_signed_rank(&d, Alternative::Less).unwrap();
            let two = wilcoxon_signed_rank(&d, Alternative::TwoSided).unwrap();
            assert!(greater.exact);
            assert!((greater.statistic - observed).abs() < 1e-9);
            assert!((greater.p_value - ge as f64 / total).abs() < 1e-12, "{d:?}");
            assert!((less.p_value - le as f64 / total).abs() < 1e-12, "{d:?}");
            let expect_two = (2.0 * (ge.min(le) as f64 / total)).min(1.0);
            assert!((two.p_value - expect_two).abs() < 1e-12);
        }
    }
}

#[test]
fn ols_matches_normal_equations() {
    let mut r = rng::seeded(5);
    let n = 40;
    let x = DMatrix::from_fn(n, 3, |_, _| r.random_range(-2.0..2.0));
    let noise = Normal::new(0.0, 0.5).unwrap();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * x[(i, 2)] + noise.sample(&mut r))
        .collect();
    let fit = ols_fit(&x, &y).unwrap();
    let design = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let yv = nalgebra::DVector::from_vec(y.clone());
    let beta = (design.transpose() * &design).lu().solve(&(design.transpose() * &yv)).unwrap();
    for j in 0..4 {
        assert!((fit.coefficients[j] - beta[j]).abs() < 1e-9);
    }
    let resid = &yv - &design * &beta;
    let rss = resid.norm_squared();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    assert!((fit.rss - rss).abs() < 1e-9 * tss);
    assert!((fit.r_squared - (1.0 - rss / tss)).abs() < 1e-12);
}

#[test]
fn f_test_matches_textbook_formula() {
    let mut r = rng::seeded(6);
    let n = 30;
    let x = DMatrix::from_fn(n, 3, |_, _| r.random_range(0.0..1.0));
    let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + 0.3 * x[(i, 2)] + r.random_range(-0.2..0.2)).collect();
    let full = ols_fit(&x, &y).unwrap();
    let restricted = ols_fit(&x.columns(0, 1).into_owned(), &y).unwrap();
    let t = nested_f_test(&restricted, &full).unwrap();
    let (df1, df2) = (2.0, (n - 4) as f64);
    let f = ((restricted.rss - full.rss) / df1) / (full.rss / df2);
    let p = 1.0 - FisherSnedecor::new(df1, df2).unwrap().cdf(f);
    assert_eq!((t.df1, t.df2), (2, n - 4));
    assert!((t.f - f).abs() < 1e-9 * f.max(1.0));
    assert!((t.p_value - p).abs() < 1e-9);
}

#[test]
fn slot_distribution_matches_competing_exponentials() {
    let cat = EventCatalog::build(3).unwrap();
    let h = rates(&cat);
    let dt = 0.1;
    for index in 0..cat.state_count() {
        let x = StateVector::from_index(index, 3);
        let d = slot_event_distribution(&cat, &x, &h, dt).unwrap();
        let active: Vec<usize> = (0..cat.len()).filter(|&e| cat.events()[e].guard(&x)).collect();
        let total: f64 = active.iter().map(|&e| h.get(e)).sum();
        assert!((d.no_event - (-total * dt).exp()).abs() < 1e-15);
        for &e in &active {
            // P(first of the competing clocks is e and it rings before dt)
            let p = h.get(e) / total * (1.0 - (-total * dt).exp());
            assert!((d.probability(Some(e)) - p).abs() < 1e-15);
        }
        assert!((d.total() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn trajectory_loglik_matches_holding_time_product() {
    let cat = EventCatalog::build(2).unwrap();
    let h = rates(&cat);
    let traj = gillespie_simulate(&cat, &h, StateVector::silent(2), 60.0, 8).unwrap();
    let states = traj.replay(&cat).unwrap();
    let mut x = traj.initial_state;
    let mut t = 0.0;
    let mut ll = 0.0;
    for (ev, next) in traj.events.iter().zip(&states) {
        let total: f64 = (0..cat.len()).filter(|&e| cat.events()[e].guard(&x)).map(|e| h.get(e)).sum();
        // exponential holding density times the jump probability
        ll += (total * (-total * (ev.time - t)).exp()).ln() + (h.get(ev.event) / total).ln();
        t = ev.time;
        x = *next;
    }
    let total: f64 = (0..cat.len()).filter(|&e| cat.events()[e].guard(&x)).map(|e| h.get(e)).sum();
    ll += -total * (traj.horizon - t);
    let lib = trajectory_loglik(&traj, &cat, &h).unwrap();
    assert!((lib - ll).abs() < 1e-9 * ll.abs().max(1.0), "{lib} vs {ll}");
}

#[test]
fn gap_mixture_recovers_planted_components() {
    let mut r = rng::seeded(12);
    let short = Normal::new((0.15f64).ln(), 0.3).unwrap();
    let long = Normal::new((1.5f64).ln(), 0.3).unwrap();
    let gaps: Vec<f64> = (0..3000)
        .map(|i| if i % 3 == 0 { long.sample(&mut r) } else { short.sample(&mut r) }.exp())
        .collect();
    let m = fit_gap_mixture(&gaps).unwrap();
    assert!(!m.single_component);
    assert!((m.means[0] - (0.15f64).ln()).abs() < 0.05, "{m:?}");
    assert!((m.means[1] - (1.5f64).ln()).abs() < 0.05, "{m:?}");
    assert!((m.weights[1] - 1.0 / 3.0).abs() < 0.03);
    assert!(m.break_threshold > 0.15 && m.break_threshold < 1.5);
    assert!(m.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
}

#[test]
fn hazard_recovers_additive_coefficients() {
    let mut r = rng::seeded(21);
    let betas = [0.5, 0.2, 0.1, 1.0];
    let base = 0.05;
    let records: Vec<SurvivalRecord> = (0..20000)
        .map(|_| {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(0.0..0.5)).collect();
            let lambda = base + x.iter().zip(&betas).map(|(a, b)| a * b).sum::<f64>();
            let t = Exp::new(lambda).unwrap().sample(&mut r);
            SurvivalRecord::exact(t, false, x)
        })
        .collect();
    let fit = fit_hazard(&records).unwrap();
    assert!(fit.converged);
    assert!((fit.baseline - base).abs() < 0.03, "{fit:?}");
    for (b, t) in fit.betas.iter().zip(betas) {
        assert!((b - t).abs() < 0.15 * t + 0.03, "{:?}", fit.betas);
    }
}

/// With identical emission densities for both statuses the observations
/// carry no information, so the rate draws follow the Gamma prior.
#[test]
fn flat_emission_leaves_rates_at_prior() {
    let cat = EventCatalog::build(2).unwrap();
    let flat = EmissionParams::separated(2, 0.0, 1.0).unwrap();
    let statuses = vec![vec![false, false]; 10];
    let obs = sample_observations(&statuses, &flat, 0.1, 4).unwrap();
    let prior = default_prior(&obs, &cat).unwrap();
    let mut config = GibbsConfig::new(30_500, 500, 0.1, 17);
    config.thinning = 15;
    config.update_emission = false;
    let init = GibbsState {
        path: None,
        rates: RateVector::new(prior.rates.mean.clone()).unwrap(),
        emission: flat,
    };
    let chain = run_chain_from(&obs, &cat, &config, &prior, init).unwrap();
    for e in [0, cat.len() - 1] {
        let gamma = Gamma::new(prior.rates.shape(e), prior.rates.exposure(e)).unwrap();
        let mut draws: Vec<f64> = chain.samples.iter().map(|s| s.rates.get(e)).collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = gamma.cdf(*v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value
        assert!(ks < 1.63 / n.sqrt(), "event {e}: KS {ks} over {n} draws");
    }
}

/// Posterior draws should predict fresh frames from the same session better
/// than the prior mean does.
#[test]
fn posterior_improves_held_out_prediction() {
    let cat = EventCatalog::build(2).unwrap();
    let h = rates(&cat);
    let dt = 0.1;
    let slots = slotted_simulate(&cat, &h, StateVector::silent(2), 120.0, dt, 30).unwrap();
    let statuses = LatentPath::from_slots(&slots, &cat).unwrap().vocal_statuses(&cat);
    let vocal: Vec<StateVector> = statuses.iter().map(|s| StateVector::from_bools(s).unwrap()).collect();
    let truth = EmissionParams::separated(2, 3.0, 1.0).unwrap();
    let obs = sample_observations(&statuses, &truth, dt, 31).unwrap();
    let held_out = sample_observations(&statuses, &truth, dt, 32).unwrap();
    let prior = default_prior(&obs, &cat).unwrap();
    let chain = groupdyn::infer::run_chain(&obs, &cat, &GibbsConfig::new(150, 50, dt, 33)).unwrap();
    let prior_params = groupdyn::infer::prior_mean_emission(&prior).unwrap();
    let score = |p: &EmissionParams| -> f64 {
        held_out
            .frames
            .iter()
            .zip(&vocal)
            .map(|(y, x)| frame_loglik(y, x, p).unwrap())
            .sum()
    };
    let post = &chain.samples.last().unwrap().emission;
    let (s_prior, s_post, s_truth) = (score(&prior_params), score(post), score(&truth));
    assert!(s_post > s_prior, "posterior {s_post} vs prior {s_prior}");
    let frames = (held_out.len() * 2) as f64;
    assert!((s_truth - s_post) / frames < 0.05, "posterior {s_post} vs truth {s_truth}");
}
