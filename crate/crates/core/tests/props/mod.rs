//! Invariant checks shared by the proptest suite and the acceptance run.
//! Each check takes generated inputs and fails through `prop_assert!`.

#![allow(dead_code)]

use hcpanel::eb::{eb_estimates, oracle_estimates, predict_one_step, Method, PointEstimate, UnitEstimates};
use hcpanel::identification::{
    arma_quadratic_roots, build_annihilator, diff_covariance, first_difference_t3, first_difference_t4,
    invert_ar1_firstdiff, invert_ar1_levelshift, invert_ar1_seconddiff, invert_arma11, level_shift_t5,
    second_difference_t4,
};
use hcpanel::mixture::{objective, posterior_mean, posterior_weights, foc_gap};
use hcpanel::model::{cholesky_lower, covariance, loglik, loglik_ar1_closed_form, score, simulate_unit};
use hcpanel::montecarlo::{MetricsRow, Target};
use hcpanel::solvers::{em_fit, em_weight_update, fr_step, project_theta, w_step, wfr_fit};
use hcpanel::{
    CovarianceFamily, CovariateMode, MixingDistribution, PanelDataset, PanelUnit, SolverConfig, TargetFunctional,
    Theta, ThetaBox,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), TestCaseError>;

// ---------- strategies ----------

pub fn family() -> impl Strategy<Value = CovarianceFamily> {
    prop_oneof![Just(CovarianceFamily::Ar1), Just(CovarianceFamily::Arma11)]
}

/// Anywhere in the default box (`|phi| <= 1` for ARMA).
pub fn theta_in_box(family: CovarianceFamily) -> BoxedStrategy<Theta> {
    let base = (-3.0..3.0f64, -2.0..2.0f64, 1e-4..25.0f64, -0.99..0.99f64);
    match family {
        CovarianceFamily::Ar1 => base.prop_map(|(a, b, s, r)| Theta::ar1(a, b, s, r)).boxed(),
        CovarianceFamily::Arma11 => (base, -1.0..1.0f64)
            .prop_map(|((a, b, s, r), p)| Theta::arma11(a, b, s, r, p))
            .boxed(),
    }
}

/// Well-conditioned interior points for finite differences.
pub fn theta_interior(family: CovarianceFamily) -> BoxedStrategy<Theta> {
    let base = (-2.0..2.0f64, -1.0..1.0f64, 0.2..3.0f64, -0.9..0.9f64);
    match family {
        CovarianceFamily::Ar1 => base.prop_map(|(a, b, s, r)| Theta::ar1(a, b, s, r)).boxed(),
        CovarianceFamily::Arma11 => (base, -0.9..0.9f64)
            .prop_map(|((a, b, s, r), p)| Theta::arma11(a, b, s, r, p))
            .boxed(),
    }
}

/// Unit simulated from `theta`, with a covariate path when `with_x2`.
pub fn unit_from(theta: &Theta, t: usize, with_x2: bool, seed: u64, id: &str) -> PanelUnit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Option<Vec<f64>> = with_x2.then(|| (0..t).map(|s| 0.3 + 0.1 * s as f64 + (seed % 5) as f64 * 0.1).collect());
    simulate_unit(id, theta, x.as_deref(), t, &mut rng).expect("valid simulation input")
}

/// Small panel drawn from a few random AR(1) or ARMA generators.
#[derive(Debug, Clone)]
pub struct Case {
    pub family: CovarianceFamily,
    pub data: PanelDataset,
    pub g: MixingDistribution,
}

pub fn case() -> impl Strategy<Value = Case> {
    (family(), any::<bool>(), 2usize..9, 1usize..6, any::<u64>())
        .prop_flat_map(|(family, with_x2, n, m, seed)| {
            (
                Just(family),
                Just(with_x2),
                prop::collection::vec(theta_interior(family), m),
                prop::collection::vec(0.05..1.0f64, m),
                prop::collection::vec(2usize..8, n),
                Just(seed),
            )
        })
        .prop_map(|(family, with_x2, atoms, w, ts, seed)| {
            let atoms: Vec<Theta> = atoms
                .into_iter()
                .map(|mut t| {
                    if !with_x2 {
                        t.b = 0.0;
                    }
                    t
                })
                .collect();
            let units = ts
                .iter()
                .enumerate()
                .map(|(i, &t)| unit_from(&atoms[i % atoms.len()], t, with_x2, seed.wrapping_add(i as u64), &format!("u{i}")))
                .collect();
            let mode = if with_x2 {
                CovariateMode::InterceptPlusX2
            } else {
                CovariateMode::InterceptOnly
            };
            Case {
                family,
                data: PanelDataset::new(units, mode).unwrap(),
                g: MixingDistribution::normalized(atoms, w).unwrap(),
            }
        })
}

fn bounds(family: CovarianceFamily) -> ThetaBox {
    ThetaBox::default_for(family)
}

// ---------- model ----------

/// Symmetric, Cholesky-factorizable, and eigenvalues inside the bounds
/// implied by the spectral density: for AR(1) in
/// `[sigma2 / (1 + |rho|)^2, sigma2 / (1 - |rho|)^2]`.
pub fn covariance_is_valid(theta: Theta, t: usize, family: CovarianceFamily) -> Check {
    let s = covariance(family, theta.sigma2, theta.rho, theta.phi, t).unwrap();
    prop_assert_eq!(&s, &s.transpose());
    prop_assert!(cholesky_lower(&s).is_ok());
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let lo = eig.min();
    let hi = eig.max();
    prop_assert!(lo > 0.0, "min eigenvalue {}", lo);
    if family == CovarianceFamily::Ar1 {
        let r = theta.rho.abs();
        let (c_lo, c_hi) = (theta.sigma2 / (1.0 + r).powi(2), theta.sigma2 / (1.0 - r).powi(2));
        prop_assert!(lo >= c_lo * (1.0 - 1e-8), "{} < {}", lo, c_lo);
        prop_assert!(hi <= c_hi * (1.0 + 1e-8), "{} > {}", hi, c_hi);
    }
    Ok(())
}

pub fn loglik_matches_closed_form(theta: Theta, t: usize, with_x2: bool, seed: u64) -> Check {
    let u = unit_from(&theta, t, with_x2, seed, "u");
    let a = loglik(&u, &theta, CovarianceFamily::Ar1).unwrap();
    let b = loglik_ar1_closed_form(&u, &theta).unwrap();
    prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
    Ok(())
}

fn perturb(theta: &Theta, k: usize, h: f64) -> Theta {
    let mut t = *theta;
    match k {
        0 => t.a += h,
        1 => t.b += h,
        2 => t.sigma2 += h,
        3 => t.rho += h,
        _ => t.phi = Some(t.phi_or_zero() + h),
    }
    t
}

/// Analytic score against central differences:
/// `max_k |g_k - fd_k| / max(|fd_k|, 1) <= 1e-5`.
pub fn score_matches_differences(theta: Theta, t: usize, with_x2: bool, seed: u64, family: CovarianceFamily) -> Check {
    let u = unit_from(&theta, t, with_x2, seed, "u");
    let g = score(&u, &theta, family).unwrap().to_vec(family);
    for (k, gk) in g.iter().enumerate() {
        let base = [theta.a, theta.b, theta.sigma2, theta.rho, theta.phi_or_zero()][k];
        let h = 1e-5 * base.abs().max(1.0);
        let up = loglik(&u, &perturb(&theta, k, h), family).unwrap();
        let dn = loglik(&u, &perturb(&theta, k, -h), family).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let rel = (gk - fd).abs() / fd.abs().max(1.0);
        prop_assert!(rel <= 1e-5, "component {}: analytic {} fd {}", k, gk, fd);
    }
    Ok(())
}

// ---------- mixture ----------

pub fn posterior_rows_sum_to_one(c: &Case) -> Check {
    let pi = posterior_weights(&c.g, &c.data, c.family);
    for i in 0..pi.nrows() {
        let s: f64 = pi.row(i).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-10);
        prop_assert!(pi.row(i).iter().all(|p| *p >= 0.0));
    }
    Ok(())
}

pub fn posterior_mean_ignores_atom_splitting(c: &Case, split: f64) -> Check {
    let mut atoms = c.g.atoms().to_vec();
    let mut w = c.g.weights().to_vec();
    atoms.push(atoms[0]);
    w.push(w[0] * (1.0 - split));
    w[0] *= split;
    let h = MixingDistribution::normalized(atoms, w).unwrap();
    for u in &c.data.units {
        for tau in [TargetFunctional::A, TargetFunctional::Sigma2, TargetFunctional::RhoA] {
            let a = posterior_mean(&c.g, u, &tau, c.family);
            let b = posterior_mean(&h, u, &tau, c.family);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }
    Ok(())
}

pub fn objective_is_permutation_invariant(c: &Case, shift: usize) -> Check {
    let m = c.g.len();
    let perm: Vec<usize> = (0..m).map(|j| (j + shift) % m).collect();
    let g2 = MixingDistribution::normalized(
        perm.iter().map(|&j| c.g.atoms()[j]).collect(),
        perm.iter().map(|&j| c.g.weights()[j]).collect(),
    )
    .unwrap();
    let mut units = c.data.units.clone();
    units.reverse();
    let d2 = PanelDataset::new(units, c.data.covariate_mode).unwrap();
    let a = objective(&c.g, &c.data, c.family);
    let b = objective(&g2, &d2, c.family);
    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    Ok(())
}

/// Posterior means stay inside the range of the functional over the atoms.
pub fn posterior_mean_in_atom_hull(c: &Case) -> Check {
    for tau in [TargetFunctional::A, TargetFunctional::B, TargetFunctional::Sigma2, TargetFunctional::Rho] {
        let vals: Vec<f64> = c.g.atoms().iter().map(|t| tau.eval(t)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        for u in &c.data.units {
            let v = posterior_mean(&c.g, u, &tau, c.family);
            prop_assert!(v >= lo - slack && v <= hi + slack, "{} outside [{}, {}]", v, lo, hi);
        }
    }
    Ok(())
}

// ---------- solvers ----------

pub fn fr_step_is_probability_vector(c: &Case, eta: f64) -> Check {
    let w = fr_step(&c.g, &c.data, eta, c.family);
    prop_assert!(w.iter().all(|x| *x >= 0.0));
    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    Ok(())
}

pub fn fr_step_at_unit_eta_is_em(c: &Case) -> Check {
    let a = fr_step(&c.g, &c.data, 1.0, c.family);
    let b = em_weight_update(&c.g, &c.data, c.family);
    for (x, y) in a.iter().zip(&b) {
        prop_assert!((x - y).abs() <= 1e-14, "{} vs {}", x, y);
    }
    Ok(())
}

/// Projection lands in the box and is idempotent.
pub fn projection_clips(theta: Theta, family: CovarianceFamily) -> Check {
    let b = bounds(family);
    let mut wild = theta;
    wild.sigma2 = theta.sigma2 * 4.0 - 50.0;
    wild.rho = theta.rho * 3.0;
    if let Some(p) = wild.phi.as_mut() {
        *p *= 2.5;
    }
    let p = project_theta(&wild, &b);
    prop_assert!(b.contains(&p));
    prop_assert_eq!(project_theta(&p, &b), p);
    prop_assert_eq!((p.a, p.b), (wild.a, wild.b));
    prop_assert_eq!(p.rho, wild.rho.clamp(-b.rho_abs_max, b.rho_abs_max));
    Ok(())
}

/// The W-step keeps variance parameters in the box and leaves atoms that
/// carry no posterior weight where they are.
pub fn w_step_respects_box_and_idle_atoms(c: &Case, eta: f64) -> Check {
    let b = bounds(c.family);
    let mut w = c.g.weights().to_vec();
    let idle = w.len() > 1;
    if idle {
        w[0] = 0.0;
    }
    let moved = w_step(&c.g, &w, &c.data, eta, &b, c.family).unwrap();
    prop_assert!(moved.iter().all(|t| b.contains(t)));
    if idle {
        prop_assert_eq!(moved[0], c.g.atoms()[0]);
    }
    Ok(())
}

fn quick(m: usize, n_max: usize, tol: f64, seed: u64, family: CovarianceFamily) -> SolverConfig {
    SolverConfig {
        m,
        eta: 0.1,
        n_max,
        tol,
        bounds: bounds(family),
        init_b: 1,
        seed,
        trace_every: 1,
    }
}

pub fn em_objective_never_decreases(c: &Case) -> Check {
    let cfg = quick(c.g.len(), 15, f64::NEG_INFINITY, 0, c.family);
    let fit = em_fit(&c.data, &cfg, c.family, Some(c.g.clone())).unwrap();
    for pair in fit.trace.windows(2) {
        prop_assert!(pair[1].objective >= pair[0].objective - 1e-10, "{:?}", pair);
    }
    Ok(())
}

/// Identical atoms receive identical updates, so they never separate.
pub fn identical_atoms_stay_identical(c: &Case, m: usize) -> Check {
    let cfg = quick(m, 10, f64::NEG_INFINITY, 0, c.family);
    let g0 = MixingDistribution::uniform(vec![c.g.atoms()[0]; m]).unwrap();
    let fit = wfr_fit(&c.data, &cfg, c.family, Some(g0)).unwrap();
    let first = fit.g_hat.atoms()[0];
    prop_assert!(fit.g_hat.atoms().iter().all(|t| *t == first));
    prop_assert!(fit.g_hat.weights().iter().all(|w| *w == fit.g_hat.weights()[0]));
    Ok(())
}

pub fn fits_are_deterministic(c: &Case, seed: u64) -> Check {
    let cfg = quick(3, 8, 1e-3, seed, c.family);
    let a = wfr_fit(&c.data, &cfg, c.family, None);
    let b = wfr_fit(&c.data, &cfg, c.family, None);
    prop_assert_eq!(a, b);
    Ok(())
}

/// A declared convergence carries a valid certificate.
pub fn converged_fits_certify(c: &Case) -> Check {
    let tol = 5e-2;
    let cfg = quick(c.g.len(), 200, tol, 1, c.family);
    let fit = wfr_fit(&c.data, &cfg, c.family, Some(c.g.clone())).unwrap();
    if fit.converged {
        prop_assert!(fit.foc_gap <= tol);
        let gap = foc_gap(&fit.g_hat, &c.data, c.family);
        prop_assert!(gap <= tol + 1e-10, "{}", gap);
    }
    Ok(())
}

// ---------- identification ----------

pub fn annihilator_is_orthonormal(x: DMatrix<f64>) -> Check {
    let p = build_annihilator(&x).unwrap();
    let mx = p.m_matrix.transpose() * &x;
    let mm = p.m_matrix.transpose() * &p.m_matrix;
    let eye = DMatrix::<f64>::identity(mm.nrows(), mm.ncols());
    prop_assert!(mx.abs().max() <= 1e-10 * x.abs().max().max(1.0));
    prop_assert!((mm - eye).abs().max() <= 1e-10);
    prop_assert_eq!(p.m_matrix.ncols(), x.nrows() - x.ncols());
    Ok(())
}

/// Worst of the absolute error in `rho`, `phi` and the relative error in `sigma2`.
pub fn round_trip_error(truth: &[f64], got: &[f64]) -> f64 {
    truth
        .iter()
        .zip(got)
        .enumerate()
        .map(|(k, (t, g))| if k == 0 { (t - g).abs() / t } else { (t - g).abs() })
        .fold(0.0, f64::max)
}

pub fn ar1_inversions_round_trip(sigma2: f64, rho: f64, tol: f64) -> Check {
    let ar1 = CovarianceFamily::Ar1;
    let v = diff_covariance(&first_difference_t3(), sigma2, rho, None, ar1).unwrap();
    let (s1, r1) = invert_ar1_firstdiff(&v).unwrap();
    prop_assert!(round_trip_error(&[sigma2, rho], &[s1, r1]) <= tol, "first diff {} {}", s1, r1);
    let v = diff_covariance(&second_difference_t4(), sigma2, rho, None, ar1).unwrap();
    let (s2, r2) = invert_ar1_seconddiff(&v).unwrap();
    prop_assert!(round_trip_error(&[sigma2, rho], &[s2, r2]) <= tol, "second diff {} {}", s2, r2);
    prop_assert!(round_trip_error(&[s1, r1], &[s2, r2]) <= 2.0 * tol);
    let v = diff_covariance(&level_shift_t5(), sigma2, rho, None, ar1).unwrap();
    let (s3, r3) = invert_ar1_levelshift(v.v[(0, 0)], v.v[(1, 2)]).unwrap();
    prop_assert!(round_trip_error(&[sigma2, rho], &[s3, r3]) <= tol, "level shift {} {}", s3, r3);
    Ok(())
}

pub fn arma_inversion_round_trips(sigma2: f64, rho: f64, phi: f64, tol: f64) -> Check {
    let v = diff_covariance(&first_difference_t4(), sigma2, rho, Some(phi), CovarianceFamily::Arma11).unwrap();
    let (s, r, p) = invert_arma11(&v).unwrap();
    prop_assert!(round_trip_error(&[sigma2, rho, phi], &[s, r, p]) <= tol, "{} {} {}", s, r, p);
    Ok(())
}

pub fn arma_roots_are_reciprocal(r: f64) -> Check {
    let (small, big) = arma_quadratic_roots(r).unwrap();
    prop_assert!(small.abs() <= 1.0);
    prop_assert!((small * big - 1.0).abs() <= 1e-12);
    prop_assert!((small * small - r * small + 1.0).abs() <= 1e-12 * r.abs());
    Ok(())
}

// ---------- eb ----------

/// Posterior means of bounded components respect the box, and the oracle
/// rule under the same prior is the EB rule.
pub fn eb_estimates_in_box_and_match_oracle(c: &Case) -> Check {
    let b = bounds(c.family);
    let eb = eb_estimates(&c.g, &c.data, c.family);
    let or = oracle_estimates(&c.g, &c.data, c.family);
    for (e, o) in eb.iter().zip(&or) {
        let p = e.estimate.unwrap();
        prop_assert!(p.sigma2 >= b.sigma2_min && p.sigma2 <= b.sigma2_max);
        prop_assert!(p.rho.abs() <= b.rho_abs_max);
        prop_assert_eq!(e.estimate, o.estimate);
        prop_assert_eq!((e.method, o.method), (Method::Eb, Method::Oracle));
    }
    Ok(())
}

fn est(v: [f64; 5]) -> UnitEstimates {
    UnitEstimates {
        unit_id: "u".into(),
        method: Method::Eb,
        estimate: Some(PointEstimate {
            a: v[0],
            b: v[1],
            sigma2: 0.1,
            rho: v[2],
            rho_a: v[3],
            rho_b: v[4],
        }),
        skip_reason: None,
    }
}

/// `y_hat` is linear in `(a, b, rho, rho a, rho b)`.
pub fn prediction_is_linear(u: &PanelUnit, e1: [f64; 5], e2: [f64; 5], k: f64) -> Check {
    let f = |v: [f64; 5]| predict_one_step(&est(v), u).unwrap().y_hat;
    let sum: [f64; 5] = std::array::from_fn(|i| e1[i] + e2[i]);
    let scaled: [f64; 5] = std::array::from_fn(|i| k * e1[i]);
    let tol = 1e-12 * (f(e1).abs() + f(e2).abs() + 1.0);
    prop_assert!((f(sum) - f(e1) - f(e2)).abs() <= tol);
    prop_assert!((f(scaled) - k * f(e1)).abs() <= tol * k.abs().max(1.0));
    Ok(())
}

// ---------- montecarlo ----------

pub fn metrics_rmse_identity(errors: &[f64]) -> Check {
    let r = MetricsRow::from_errors(Target::A, Method::Mle, errors, None);
    prop_assert!((r.rmse * r.rmse - (r.bias * r.bias + r.sd * r.sd)).abs() <= 1e-9);
    Ok(())
}

// ---------- serialization ----------

pub fn mixing_json_round_trip(g: &MixingDistribution) -> Check {
    let s = serde_json::to_string(g).unwrap();
    let back: MixingDistribution = serde_json::from_str(&s).unwrap();
    prop_assert_eq!(&back, g);
    prop_assert_eq!(serde_json::to_string(&back).unwrap(), s);
    Ok(())
}
