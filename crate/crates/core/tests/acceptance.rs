//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails. `ACCEPTANCE_ONLY=1,5,8` runs a subset.

mod props;

use std::time::{Duration, Instant};

use hcpanel::eb::Method;
use hcpanel::identification::{
    diff_covariance, first_difference_t3, first_difference_t4, invert_ar1_firstdiff, invert_ar1_levelshift,
    invert_ar1_seconddiff, invert_arma11, level_shift_t5, second_difference_t4, verify_nonidentification_t4,
};
use hcpanel::mixture::foc_gap;
use hcpanel::model::{loglik, loglik_ar1_closed_form, simulate_unit};
use hcpanel::montecarlo::{run_mc, simulate_panel, Design, DgpSpec, McReport, MetricsRow, Target};
use hcpanel::solvers::{em_fit, em_weight_update, fr_step, init_subsample_mle, wfr_fit};
use hcpanel::{CovarianceFamily, MixingDistribution, SolverConfig, Theta};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, TestRng, TestRunner, RngAlgorithm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------- pinned settings ----------

const LOGLIK_DRAWS: usize = 1000;
const LOGLIK_TOL: f64 = 1e-10;
const SCORE_DRAWS: usize = 100;
const SCORE_REL_TOL: f64 = 1e-5;
const FR_EM_ITERS: usize = 50;
const FR_EM_TOL: f64 = 1e-14;
const EM_ITERS: usize = 200;
const EM_SLACK: f64 = 1e-10;
const CERT_TOL: f64 = 1e-4;
const CERT_N_MAX: usize = 100_000;
const ID_DRAWS: usize = 1000;
const ID_TOL: f64 = 1e-9;
const NONID_TOL: f64 = 1e-9;
const MC_SEED: u64 = 20_240_501;
const HIVD_REPS: usize = 50;
const HIVDX_REPS: usize = 20;
const SMOKE_REPS: usize = 5;
const PROPERTY_CASES: u32 = 64;
const PROPERTY_CASES_SLOW: u32 = 16;

struct Outcome {
    pass: bool,
    detail: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            detail: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.detail.push(format!("{} {line}", if ok { "ok  " } else { "MISS" }));
    }

    fn within(&mut self, name: &str, value: f64, target: f64, tol: f64) {
        self.check(
            (value - target).abs() <= tol,
            format!("{name} = {value:.4} (target {target} +- {tol})"),
        );
    }

    fn runtime(&mut self, t: Duration, limit: Duration) {
        self.check(t <= limit, format!("runtime {:.1}s (limit {}s)", t.as_secs_f64(), limit.as_secs()));
    }
}

fn hivd_panel(n: usize, seed: u64) -> hcpanel::PanelDataset {
    let spec = DgpSpec {
        n,
        ..DgpSpec::new(Design::Hivd, 1, seed)
    };
    simulate_panel(&spec, &spec.prior(), &mut spec.rng(0)).unwrap().data
}

fn random_theta<R: Rng>(rng: &mut R, family: CovarianceFamily, interior: bool) -> Theta {
    let (s_lo, s_hi, r_max) = if interior { (0.2, 3.0, 0.9) } else { (1e-4, 25.0, 0.99) };
    let a = rng.random_range(-3.0..3.0);
    let b = rng.random_range(-2.0..2.0);
    let s = rng.random_range(s_lo..s_hi);
    let r = rng.random_range(-r_max..r_max);
    match family {
        CovarianceFamily::Ar1 => Theta::ar1(a, b, s, r),
        CovarianceFamily::Arma11 => Theta::arma11(a, b, s, r, rng.random_range(-0.9..0.9)),
    }
}

fn x2_path<R: Rng>(rng: &mut R, t: usize) -> Option<Vec<f64>> {
    rng.random_bool(0.5).then(|| {
        let x0: f64 = rng.random_range(0.0..1.0);
        (0..t).map(|s| x0 + 0.1 * s as f64).collect()
    })
}

// ---------- criteria ----------

fn likelihood_equivalence() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..LOGLIK_DRAWS {
        let th = random_theta(&mut rng, CovarianceFamily::Ar1, false);
        let t = rng.random_range(2..=13);
        let x = x2_path(&mut rng, t);
        let u = simulate_unit("u", &th, x.as_deref(), t, &mut rng).unwrap();
        let d = (loglik(&u, &th, CovarianceFamily::Ar1).unwrap() - loglik_ar1_closed_form(&u, &th).unwrap()).abs();
        worst = worst.max(d);
    }
    o.check(worst <= LOGLIK_TOL, format!("max |loglik - closed form| = {worst:.2e} over {LOGLIK_DRAWS} draws"));
    o.runtime(start.elapsed(), Duration::from_secs(5));
    o
}

fn score_correctness() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for family in [CovarianceFamily::Ar1, CovarianceFamily::Arma11] {
        let mut failures = 0;
        for _ in 0..SCORE_DRAWS {
            let th = random_theta(&mut rng, family, true);
            let t = rng.random_range(2..=13);
            let with_x2 = rng.random_bool(0.5);
            if props::score_matches_differences(th, t, with_x2, rng.random(), family).is_err() {
                failures += 1;
            }
        }
        o.check(
            failures == 0,
            format!("{}: {failures}/{SCORE_DRAWS} draws exceed relative error {SCORE_REL_TOL:e}", family.name()),
        );
    }
    o.runtime(start.elapsed(), Duration::from_secs(10));
    o
}

fn fr_em_equivalence() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let data = hivd_panel(200, 3);
    let cfg = SolverConfig {
        m: 30,
        ..SolverConfig::hivd()
    };
    let g0 = init_subsample_mle(&data, &cfg, CovarianceFamily::Ar1).unwrap();
    let (mut g_fr, mut g_em) = (g0.clone(), g0.clone());
    let mut worst: f64 = 0.0;
    for _ in 0..FR_EM_ITERS {
        let w_fr = fr_step(&g_fr, &data, 1.0, CovarianceFamily::Ar1);
        let w_em = em_weight_update(&g_em, &data, CovarianceFamily::Ar1);
        worst = w_fr.iter().zip(&w_em).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        g_fr = MixingDistribution::normalized(g0.atoms().to_vec(), w_fr).unwrap();
        g_em = MixingDistribution::normalized(g0.atoms().to_vec(), w_em).unwrap();
    }
    o.check(worst <= FR_EM_TOL, format!("max |w_FR - w_EM| over {FR_EM_ITERS} iterations = {worst:.2e}"));
    o.runtime(start.elapsed(), Duration::from_secs(10));
    o
}

fn em_monotonicity() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let data = hivd_panel(200, 4);
    let cfg = SolverConfig {
        m: 30,
        n_max: EM_ITERS,
        tol: f64::NEG_INFINITY,
        trace_every: 1,
        ..SolverConfig::hivd()
    };
    let fit = em_fit(&data, &cfg, CovarianceFamily::Ar1, None).unwrap();
    let worst = fit
        .trace
        .windows(2)
        .map(|p| p[0].objective - p[1].objective)
        .fold(f64::NEG_INFINITY, f64::max);
    o.check(fit.trace.len() == EM_ITERS + 1, format!("{} trace records", fit.trace.len()));
    o.check(worst <= EM_SLACK, format!("largest decrease {worst:.2e} (slack {EM_SLACK:e})"));
    o.runtime(start.elapsed(), Duration::from_secs(60));
    o
}

fn optimality_certificate() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let data = hivd_panel(500, 5);
    let cfg = SolverConfig {
        eta: 0.1,
        tol: CERT_TOL,
        n_max: CERT_N_MAX,
        trace_every: 0,
        ..SolverConfig::hivd()
    };
    let fit = wfr_fit(&data, &cfg, CovarianceFamily::Ar1, None).unwrap();
    let gap = foc_gap(&fit.g_hat, &data, CovarianceFamily::Ar1);
    o.check(fit.converged, format!("declared convergence after {} iterations", fit.n_stop));
    o.check(
        fit.converged && gap <= CERT_TOL,
        format!("recomputed foc_gap = {gap:.3e} (tol {CERT_TOL:e})"),
    );
    o.runtime(start.elapsed(), Duration::from_secs(300));
    o
}

fn identification_round_trips() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ar1 = CovarianceFamily::Ar1;
    let mut worst = [0.0f64; 4];
    for _ in 0..ID_DRAWS {
        let s = rng.random_range(0.01..10.0);
        let r = rng.random_range(-0.95..0.95);
        let v = diff_covariance(&first_difference_t3(), s, r, None, ar1).unwrap();
        let (s1, r1) = invert_ar1_firstdiff(&v).unwrap();
        worst[0] = worst[0].max(props::round_trip_error(&[s, r], &[s1, r1]));
        let v = diff_covariance(&second_difference_t4(), s, r, None, ar1).unwrap();
        let (s2, r2) = invert_ar1_seconddiff(&v).unwrap();
        worst[1] = worst[1].max(props::round_trip_error(&[s, r], &[s2, r2]));
        let v = diff_covariance(&level_shift_t5(), s, r, None, ar1).unwrap();
        let (s3, r3) = invert_ar1_levelshift(v.v[(0, 0)], v.v[(1, 2)]).unwrap();
        worst[2] = worst[2].max(props::round_trip_error(&[s, r], &[s3, r3]));
        let p = loop {
            let p: f64 = rng.random_range(-0.95..0.95);
            if (r + p).abs() > 0.1 {
                break p;
            }
        };
        let v = diff_covariance(&first_difference_t4(), s, r, Some(p), CovarianceFamily::Arma11).unwrap();
        let (s4, r4, p4) = invert_arma11(&v).unwrap();
        worst[3] = worst[3].max(props::round_trip_error(&[s, r, p], &[s4, r4, p4]));
    }
    for (name, w) in ["first difference", "second difference", "level shift", "arma11"].iter().zip(worst) {
        o.check(w <= ID_TOL, format!("{name}: max error {w:.2e} over {ID_DRAWS} draws"));
    }
    o.runtime(start.elapsed(), Duration::from_secs(5));
    o
}

fn nonidentification_pair() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let rep = verify_nonidentification_t4((1.04, 0.2), (1.56, 0.8)).unwrap();
    o.check(
        rep.equivalent && rep.max_discrepancy <= NONID_TOL,
        format!("equivalent = {}, discrepancy {:.2e}", rep.equivalent, rep.max_discrepancy),
    );
    o.runtime(start.elapsed(), Duration::from_secs(1));
    o
}

fn row(table: &[MetricsRow], target: Target, method: Method) -> MetricsRow {
    *table.iter().find(|r| r.target == target && r.method == method).unwrap()
}

fn mc(design: Design, n: usize, reps: usize, m: usize) -> (McReport, Duration) {
    let start = Instant::now();
    let spec = DgpSpec {
        n,
        ..DgpSpec::new(design, reps, MC_SEED)
    };
    let solver = SolverConfig {
        m,
        ..design.default_solver()
    };
    let report = run_mc(&spec, &solver).unwrap();
    (report, start.elapsed())
}

fn failures_line(o: &mut Outcome, r: &McReport) {
    o.check(
        r.failures.is_empty(),
        format!("{} replications, {} failed", r.outcomes.len() + r.failures.len(), r.failures.len()),
    );
}

fn table2_hivd(r: &McReport, t: Duration) -> Outcome {
    let mut o = Outcome::new();
    failures_line(&mut o, r);
    let tab = &r.table;
    o.within("EB RMSE(a)", row(tab, Target::A, Method::Eb).rmse, 0.414, 0.03);
    o.within("MLE RMSE(a)", row(tab, Target::A, Method::Mle).rmse, 0.449, 0.03);
    o.within("MLE Bias(rho)", row(tab, Target::Rho, Method::Mle).bias, -0.552, 0.05);
    o.within("EB RMSE(rho)", row(tab, Target::Rho, Method::Eb).rmse, 0.330, 0.05);
    o.within("Oracle RMSE(rho)", row(tab, Target::Rho, Method::Oracle).rmse, 0.273, 0.03);
    let r2 = |m| row(tab, Target::YNext, m).r2.unwrap();
    let (ro, re, rm) = (r2(Method::Oracle), r2(Method::Eb), r2(Method::Mle));
    o.check(ro >= re && re > rm, format!("R2 Oracle {ro:.4} >= EB {re:.4} > MLE {rm:.4}"));
    o.within("EB R2", re, 0.821, 0.03);
    for target in [Target::A, Target::Sigma2, Target::Rho] {
        o.detail.push(format!(
            "     {:<6} rmse: Oracle {:.4}  MLE {:.4}  EB {:.4}",
            target.name(),
            row(tab, target, Method::Oracle).rmse,
            row(tab, target, Method::Mle).rmse,
            row(tab, target, Method::Eb).rmse
        ));
    }
    o.runtime(t, Duration::from_secs(2 * 3600));
    o
}

fn table2_hivdr(r: &McReport, t: Duration) -> Outcome {
    let mut o = Outcome::new();
    failures_line(&mut o, r);
    o.within("EB RMSE(rho)", row(&r.table, Target::Rho, Method::Eb).rmse, 0.182, 0.05);
    let orr = row(&r.table, Target::Rho, Method::Oracle).rmse;
    o.check(orr.abs() <= 1e-9, format!("Oracle RMSE(rho) = {orr:.2e} (target 0 +- 1e-9)"));
    o.runtime(t, Duration::from_secs(2 * 3600));
    o
}

fn orderings(o: &mut Outcome, label: &str, r: &McReport) {
    for target in [Target::A, Target::B, Target::Sigma2, Target::Rho] {
        let (a, b, c) = (
            row(&r.table, target, Method::Oracle).rmse,
            row(&r.table, target, Method::Eb).rmse,
            row(&r.table, target, Method::Mle).rmse,
        );
        o.check(
            a <= b && b <= c,
            format!("{label} RMSE({}): Oracle {a:.4} <= EB {b:.4} <= MLE {c:.4}", target.name()),
        );
    }
}

fn table3_hivdx(full: &McReport, t_full: Duration, smoke: &McReport, t_smoke: Duration) -> Outcome {
    let mut o = Outcome::new();
    failures_line(&mut o, full);
    orderings(&mut o, "full", full);
    let bias = row(&full.table, Target::Rho, Method::Mle).bias;
    o.check(bias < 0.0 && bias.abs() > 0.2, format!("MLE Bias(rho) = {bias:.4} (negative, |.| > 0.2)"));
    let gain = row(&full.table, Target::YNext, Method::Eb).r2.unwrap() - row(&full.table, Target::YNext, Method::Mle).r2.unwrap();
    o.check(gain >= 0.03, format!("EB R2 - MLE R2 = {gain:.4} (>= 0.03)"));
    o.runtime(t_full, Duration::from_secs(8 * 3600));
    failures_line(&mut o, smoke);
    orderings(&mut o, "smoke", smoke);
    o.runtime(t_smoke, Duration::from_secs(30 * 60));
    o
}

fn moment_recovery(r: &McReport) -> Outcome {
    let mut o = Outcome::new();
    let neg = r.outcomes.iter().filter(|x| x.estimated_moments.cov[(0, 1)] < 0.0).count();
    o.check(
        neg >= 18 && r.outcomes.len() == HIVDX_REPS,
        format!("Cov(a,b) < 0 in {neg}/{} replications (need >= 18/20)", r.outcomes.len()),
    );
    for name in ["Var(a)", "Var(b)"] {
        let m = r.moments.iter().find(|m| m.moment == name).unwrap();
        o.check(m.bias > 0.0, format!("{name}: truth {:.4}, bias {:+.4} (upward)", m.truth, m.bias));
    }
    let cov = r.moments.iter().find(|m| m.moment == "Cov(a,b)").unwrap();
    o.detail.push(format!("     Cov(a,b): truth {:.4}, bias {:+.4}", cov.truth, cov.bias));
    o
}

/// Mean and standard error over replications of `f(rep rows)`.
fn mean_se(reps: &[Vec<MetricsRow>], f: impl Fn(&[MetricsRow]) -> f64) -> (f64, f64) {
    let v: Vec<f64> = reps.iter().map(|r| f(r)).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_property<S: Strategy>(o: &mut Outcome, name: &str, cases: u32, strategy: S, check: impl Fn(S::Value) -> props::Check) {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let mut failure = None;
    let mut passed = 0;
    while passed < cases {
        let tree = strategy.new_tree(&mut runner).expect("strategy generates values");
        match check(tree.current()) {
            Ok(()) => passed += 1,
            Err(proptest::test_runner::TestCaseError::Reject(_)) => {}
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    match failure {
        None => o.check(true, format!("{name} ({cases} cases)")),
        Some(e) => o.check(false, format!("{name}: {e}")),
    }
}

fn property_suite(hivd: Option<&McReport>) -> Outcome {
    use proptest::prelude::*;
    use props::*;
    let mut o = Outcome::new();
    let start = Instant::now();
    let fam_box = || family().prop_flat_map(|f| (Just(f), theta_in_box(f)));
    let fam_int = || family().prop_flat_map(|f| (Just(f), theta_interior(f)));
    let n = PROPERTY_CASES;
    run_property(&mut o, "covariance symmetric and positive definite", n, (fam_box(), 1usize..14), |((f, th), t)| {
        covariance_is_valid(th, t, f)
    });
    run_property(
        &mut o,
        "loglik equals closed form",
        n,
        (theta_in_box(CovarianceFamily::Ar1), 2usize..14, any::<bool>(), any::<u64>()),
        |(th, t, x, s)| loglik_matches_closed_form(th, t, x, s),
    );
    run_property(&mut o, "score equals finite differences", n, (fam_int(), 2usize..14, any::<bool>(), any::<u64>()), |((f, th), t, x, s)| {
        score_matches_differences(th, t, x, s, f)
    });
    run_property(&mut o, "posterior rows sum to one", n, case(), |c| posterior_rows_sum_to_one(&c));
    run_property(&mut o, "atom splitting keeps posterior means", n, (case(), 0.05..0.95f64), |(c, s)| {
        posterior_mean_ignores_atom_splitting(&c, s)
    });
    run_property(&mut o, "objective permutation invariant", n, (case(), 0usize..6), |(c, s)| {
        objective_is_permutation_invariant(&c, s)
    });
    run_property(&mut o, "posterior means in atom hull", n, case(), |c| posterior_mean_in_atom_hull(&c));
    run_property(&mut o, "fr_step is a probability vector", n, (case(), 1e-3..=1.0f64), |(c, e)| {
        fr_step_is_probability_vector(&c, e)
    });
    run_property(&mut o, "fr_step at eta = 1 is EM", n, case(), |c| fr_step_at_unit_eta_is_em(&c));
    run_property(&mut o, "projection clips to the box", n, fam_box(), |(f, th)| projection_clips(th, f));
    run_property(&mut o, "w_step respects box and idle atoms", n, (case(), 1e-3..=1.0f64), |(c, e)| {
        w_step_respects_box_and_idle_atoms(&c, e)
    });
    run_property(&mut o, "EB inside box, oracle path identical", n, case(), |c| eb_estimates_in_box_and_match_oracle(&c));
    run_property(
        &mut o,
        "prediction linear in estimates",
        n,
        (theta_interior(CovarianceFamily::Ar1), 2usize..8, any::<u64>(), prop::array::uniform5(-2.0..2.0f64), prop::array::uniform5(-2.0..2.0f64), -3.0..3.0f64),
        |(th, t, s, e1, e2, k)| {
            let mut u = unit_from(&th, t, true, s, "u");
            u.x2_next = Some(1.7);
            prediction_is_linear(&u, e1, e2, k)
        },
    );
    run_property(&mut o, "annihilator orthonormal", n, (3usize..9, any::<u64>(), 0.0..1.0f64), |(t, s, frac)| {
        let d = 1 + ((t - 2) as f64 * frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        annihilator_is_orthonormal(nalgebra::DMatrix::from_fn(t, d, |_, _| rng.random_range(-2.0..2.0)))
    });
    run_property(&mut o, "AR(1) inversions round trip", n, (1e-3..25.0f64, -0.98..0.98f64), |(s, r)| {
        ar1_inversions_round_trip(s, r, 1e-10)
    });
    run_property(&mut o, "ARMA(1,1) inversion round trip", n, (1e-2..25.0f64, -0.95..0.95f64, -0.95..0.95f64), |(s, r, p)| {
        if (r + p).abs() <= 0.1 {
            return Err(proptest::test_runner::TestCaseError::reject("rho + phi near 0"));
        }
        arma_inversion_round_trips(s, r, p, 1e-10)
    });
    run_property(&mut o, "ARMA root branch", n, prop_oneof![2.0..50.0f64, -50.0..-2.0f64], arma_roots_are_reciprocal);
    run_property(&mut o, "rmse^2 = bias^2 + sd^2", n, prop::collection::vec(-5.0..5.0f64, 1..200), |e| {
        metrics_rmse_identity(&e)
    });
    run_property(&mut o, "mixing distribution JSON round trip", n, case(), |c| mixing_json_round_trip(&c.g));
    let slow = PROPERTY_CASES_SLOW;
    run_property(&mut o, "EM objective non-decreasing", slow, case(), |c| em_objective_never_decreases(&c));
    run_property(&mut o, "identical atoms stay identical", slow, (case(), 2usize..5), |(c, m)| {
        identical_atoms_stay_identical(&c, m)
    });
    run_property(&mut o, "fits deterministic", slow, (case(), any::<u64>()), |(c, s)| fits_are_deterministic(&c, s));
    run_property(&mut o, "declared convergence certified", slow, case(), |c| converged_fits_certify(&c));

    let spec = DgpSpec {
        n: 50,
        ..DgpSpec::new(Design::Hivdx, 1, 9)
    };
    let solver = SolverConfig {
        m: 10,
        n_max: 30,
        ..SolverConfig::hivdx()
    };
    let a = hcpanel::montecarlo::run_replication(&spec, &solver, 4).unwrap();
    let b = hcpanel::montecarlo::run_replication(&spec, &solver, 4).unwrap();
    o.check(a == b, "replication deterministic in (seed, rep_index)".into());

    match hivd {
        Some(r) => {
            let reps: Vec<Vec<MetricsRow>> = r.outcomes.iter().map(|x| x.rows.clone()).collect();
            let mse = |rows: &[MetricsRow], t: Target, m: Method| row(rows, t, m).rmse.powi(2);
            for target in [Target::A, Target::Sigma2, Target::Rho, Target::YNext] {
                for other in [Method::Eb, Method::Mle] {
                    let (d, se) = mean_se(&reps, |rows| mse(rows, target, Method::Oracle) - mse(rows, target, other));
                    o.check(
                        d <= 2.0 * se,
                        format!("compound MSE({}) Oracle - {}: {d:+.5} (2 SE = {:.5})", target.name(), other.name(), 2.0 * se),
                    );
                }
            }
            let r2 = |rows: &[MetricsRow], m: Method| row(rows, Target::YNext, m).r2.unwrap();
            for (hi, lo) in [(Method::Oracle, Method::Eb), (Method::Eb, Method::Mle)] {
                let (d, se) = mean_se(&reps, |rows| r2(rows, hi) - r2(rows, lo));
                o.check(
                    d >= -2.0 * se,
                    format!("R2 {} - {}: {d:+.5} (2 SE = {:.5})", hi.name(), lo.name(), 2.0 * se),
                );
            }
        }
        None => o.detail.push("     compound-MSE checks need the HIVD run (criterion 8)".into()),
    }
    o.runtime(start.elapsed(), Duration::from_secs(300));
    o
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|v| v.contains(&k));
    let names = [
        "likelihood equivalence",
        "score correctness",
        "FR/EM equivalence",
        "EM monotonicity",
        "NPMLE optimality certificate",
        "identification round trips",
        "non-identification pair",
        "HIVD table reproduction",
        "HIVDR restricted design",
        "HIVDX qualitative reproduction",
        "prior-moment recovery",
        "property suite",
    ];
    let mut failed = 0;
    let mut report = |k: usize, o: Outcome| {
        println!("{} criterion {k:>2}: {}", if o.pass { "PASS" } else { "FAIL" }, names[k - 1]);
        for d in &o.detail {
            println!("        {d}");
        }
        if !o.pass {
            failed += 1;
        }
    };
    let cheap: [(usize, fn() -> Outcome); 7] = [
        (1, likelihood_equivalence),
        (2, score_correctness),
        (3, fr_em_equivalence),
        (4, em_monotonicity),
        (5, optimality_certificate),
        (6, identification_round_trips),
        (7, nonidentification_pair),
    ];
    for (k, f) in cheap {
        if wanted(k) {
            report(k, f());
        }
    }
    let hivd = (wanted(8) || wanted(12)).then(|| mc(Design::Hivd, 1000, HIVD_REPS, 100));
    if wanted(8) {
        let (r, t) = hivd.as_ref().unwrap();
        report(8, table2_hivd(r, *t));
    }
    if wanted(9) {
        let (r, t) = mc(Design::Hivdr, 1000, HIVD_REPS, 100);
        report(9, table2_hivdr(&r, t));
    }
    if wanted(10) || wanted(11) {
        let (full, t_full) = mc(Design::Hivdx, 1000, HIVDX_REPS, 500);
        if wanted(10) {
            let (smoke, t_smoke) = mc(Design::Hivdx, 300, SMOKE_REPS, 100);
            report(10, table3_hivdx(&full, t_full, &smoke, t_smoke));
        }
        if wanted(11) {
            report(11, moment_recovery(&full));
        }
    }
    if wanted(12) {
        report(12, property_suite(hivd.as_ref().map(|(r, _)| r)));
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
