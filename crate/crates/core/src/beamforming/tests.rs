use approx::assert_relative_eq;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::Preset;
use crate::decision::DecisionPair;
use crate::instances::{random_candidate, random_decision};
use crate::rng::complex_gaussian;

fn desk() -> Scenario {
    Scenario::from_preset(Preset::Desk).unwrap()
}

fn e(n: usize, i: usize) -> CVector {
    CVector::from_fn(n, |r, _| {
        if r == i {
            C64::from(1.0)
        } else {
            C64::from(0.0)
        }
    })
}

fn unit_terms() -> ErrorTerms {
    ErrorTerms {
        lambda: [0.0; 3],
        psi: [1.0, 0.0, 0.0],
        psi_tilde: 1.0,
        c: Matrix3::identity(),
    }
}

fn single_user(noise: f64, power: f64) -> P2Problem {
    P2Problem {
        channels: vec![e(2, 0)],
        noise: vec![noise],
        rate_weights: vec![1.0],
        sensed: vec![],
        radar_constant: 0.0,
        power,
        omega_bar: 0.3,
        xi_b: 0.24,
        delta_s: 0.005,
        mu_cap: 10.0,
    }
}

fn random_problem(rng: &mut ChaCha8Rng, s: &Scenario) -> P2Problem {
    let d = random_decision(s, rng);
    P2Problem::new(&random_candidate(s, &d, rng), s).unwrap()
}

fn random_sensing_problem(rng: &mut ChaCha8Rng, s: &Scenario) -> P2Problem {
    let mut d = random_decision(s, rng);
    d.radar[0] = true;
    P2Problem::new(&random_candidate(s, &d, rng), s).unwrap()
}

fn random_w(rng: &mut ChaCha8Rng, p: &P2Problem) -> CMatrix {
    let w = CMatrix::from_fn(p.antennas(), p.num_users(), |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let scale = (p.power * rng.random_range(0.2..1.0) / crate::linalg::frobenius_power(&w)).sqrt();
    w * C64::from(scale)
}

#[test]
fn beta_hand_values() {
    let p = single_user(1.0, 1.0);
    let w = CMatrix::from_columns(&[e(2, 0)]);
    let b = update_beta(&p, &w, &[0.0]);
    assert_relative_eq!(b[0].re, 0.5, max_relative = 1e-15);
    assert_eq!(b[0].im, 0.0);
    let orth = CMatrix::from_columns(&[e(2, 1)]);
    assert_eq!(update_beta(&p, &orth, &[0.3])[0], C64::from(0.0));
}

#[test]
fn beta_and_alpha_are_block_maximisers() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let p = random_problem(&mut rng, &s);
        let w = random_w(&mut rng, &p);
        let alpha: Vec<f64> = (0..p.num_users())
            .map(|_| rng.random_range(0.0..3.0))
            .collect();
        let beta = update_beta(&p, &w, &alpha);
        let f0 = comm_surrogate(&p, &w, &alpha, &beta);
        for k in 0..p.num_users() {
            for d in [C64::new(1e-3, 0.0), C64::new(0.0, -1e-3)] {
                let mut b = beta.clone();
                b[k] += d * beta[k].norm().max(1e-300);
                assert!(comm_surrogate(&p, &w, &alpha, &b) < f0);
            }
        }
        let alpha2 = update_alpha(&p, &w, &beta);
        let f1 = comm_surrogate(&p, &w, &alpha2, &beta);
        assert!(f1 >= f0 - 1e-12 * f0.abs());
        for k in 0..p.num_users() {
            // ∂F/∂α_k = w/(1+α) − w + √w λ̸ / √(1+α) · ... vanishes at the update.
            let wk = p.rate_weights[k];
            let l = (beta[k].conj() * a_term(&p, &w, k)).re;
            let a = alpha2[k];
            let deriv = wk / (1.0 + a) - wk + l * wk.sqrt() / (1.0 + a).sqrt();
            assert!(deriv.abs() < 1e-8 * wk.max(1e-12), "{deriv}");
        }
    }
}

#[test]
fn alpha_hand_values() {
    let p = single_user(1.0, 1.0);
    let w = CMatrix::from_columns(&[e(2, 0)]);
    assert_eq!(update_alpha(&p, &w, &[C64::from(0.0)])[0], 0.0);
    let a = update_alpha(&p, &w, &[C64::from(1.0)])[0];
    assert_relative_eq!(a, (1.0 + 5f64.sqrt()) / 2.0, max_relative = 1e-15);
}

#[test]
fn quadratic_transform_recovers_rates() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let p = random_problem(&mut rng, &s);
        let w = random_w(&mut rng, &p);
        let alpha: Vec<f64> = (0..p.num_users()).map(|k| p.sinr(&w, k)).collect();
        let beta = update_beta(&p, &w, &alpha);
        let direct = p.comm_utility(&w);
        assert!((comm_surrogate(&p, &w, &alpha, &beta) - direct).abs() < 1e-8 * direct.max(1.0));
        assert_relative_eq!(
            update_alpha(&p, &w, &beta).as_slice(),
            alpha.as_slice(),
            max_relative = 1e-9
        );
    }
}

#[test]
fn mu_hand_values() {
    let mu = mu_root(&[1.0, 0.0, 0.0], &[0.0; 3], 1.0, 0.0, 4.0, 1e-12).unwrap();
    assert_relative_eq!(mu, 0.5, max_relative = 1e-10);
    let b = 0.24 / std::f64::consts::LN_10;
    let mu = mu_root(&[0.0; 3], &[0.0; 3], 0.0, b, b, 1e-14).unwrap();
    assert_relative_eq!(mu, 1.0, max_relative = 1e-10);
}

fn bisection_oracle(psi: &[f64; 3], lambda: &[f64; 3], a: f64, b: f64, eta: f64) -> f64 {
    let f = |m: f64| {
        let mut s = b / m - eta;
        for l in 0..3 {
            s += a * psi[l] / ((m + lambda[l]) * (m + lambda[l]));
        }
        s
    };
    let (mut lo, mut hi) = (1e-300, 1e300);
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn mu_root_agrees_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..1000 {
        let psi = [0, 1, 2].map(|_| 10f64.powf(rng.random_range(-6.0..1.0)));
        let lambda = [0, 1, 2].map(|_| 10f64.powf(rng.random_range(-3.0..3.0)));
        let a = rng.random_range(0.0..5.0);
        let b = rng.random_range(0.01..2.0);
        let eta = 10f64.powf(rng.random_range(-4.0..2.0));
        let mu = mu_root(&psi, &lambda, a, b, eta, 1e-10).unwrap();
        assert!(mu_residual(&psi, &lambda, a, b, mu, eta).abs() < 1e-8);
        let oracle = bisection_oracle(&psi, &lambda, a, b, eta);
        assert!((mu / oracle - 1.0).abs() < 1e-6, "{mu} vs {oracle}");
    }
}

#[test]
fn mu_is_capped_without_a_dual_price() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let p = random_sensing_problem(&mut rng, &s);
    let opts = SolverOptions::default();
    let mu = update_mu(&p, &vec![0.0; p.sensed.len()], &opts).unwrap();
    assert!(mu.iter().all(|&m| m == p.mu_cap));
}

#[test]
fn lagrangian_update_without_quadratic_term() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let p = random_problem(&mut rng, &s);
    let n = p.antennas();
    let h = CMatrix::from_fn(n, p.num_users(), |_, _| {
        complex_gaussian(1, 1.0, &mut rng)[0]
    });
    let g = CMatrix::zeros(n, n);
    let w_old = random_w(&mut rng, &p);
    let w = update_w_lagrangian(&p, &g, &h, &w_old, &SolverOptions::default());
    let lam = (crate::linalg::frobenius_power(&h) / p.power).sqrt();
    assert!((&w - &h / C64::from(lam)).norm() <= 1e-9 * w.norm());
    assert_relative_eq!(
        crate::linalg::frobenius_power(&w),
        p.power,
        max_relative = 1e-9
    );
    let zero = CMatrix::zeros(n, p.num_users());
    assert_eq!(
        update_w_lagrangian(&p, &g, &zero, &w_old, &SolverOptions::default()),
        w_old
    );
}

#[test]
fn proxlinear_hand_values() {
    let p = single_user(1.0, 0.25);
    let g = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::from(1.0), C64::from(0.0)]));
    // f̃ = 2, w̃ = [1, 0]; choose h so that f = 2(G w̃ − h) = 0.
    let w_tilde = CMatrix::from_columns(&[e(2, 0)]);
    let h = &g * &w_tilde;
    let (w, f_tilde) = update_w_proxlinear(&p, &g, &h, &w_tilde).unwrap();
    assert_eq!(f_tilde, 2.0);
    assert_relative_eq!(w[(0, 0)].re, 0.5, max_relative = 1e-15);
    assert_relative_eq!(
        crate::linalg::frobenius_power(&w),
        0.25,
        max_relative = 1e-15
    );

    // Stationary feasible point: the short-circuit returns the gradient step.
    let p = single_user(1.0, 4.0);
    let (w, _) = update_w_proxlinear(&p, &g, &h, &w_tilde).unwrap();
    assert_eq!(w, w_tilde);
    assert!(update_w_proxlinear(&p, &CMatrix::zeros(2, 2), &h, &w_tilde).is_none());
}

#[test]
fn eta_hand_values() {
    let mut p = single_user(1.0, 1.0);
    p.sensed.push(SensedTarget {
        weight: 1.0,
        steering: e(2, 0),
        terms: unit_terms(),
    });
    // Σ_k C^Lb = |v^H w|² = 0.25 at tangency; μ = 0.75 gives slack −0.5.
    let w = CMatrix::from_columns(&[e(2, 0) * C64::from(0.5)]);
    let eta = update_eta(&p, &[1.0], &w, &w, &[0.75], 1);
    assert_relative_eq!(eta[0], 1.0025, max_relative = 1e-14);
    assert_eq!(update_eta(&p, &[1.0], &w, &w, &[0.25], 1)[0], 1.0);
    assert_eq!(update_eta(&p, &[1e-4], &w, &w, &[0.0], 1)[0], 0.0);
}

#[test]
fn sca_bound_is_a_tangent_minorant() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let p = random_problem(&mut rng, &s);
    let v = radar::steering_vector(0.4, p.antennas());
    for _ in 0..1000 {
        let w = random_w(&mut rng, &p);
        let w_old = random_w(&mut rng, &p);
        for k in 0..p.num_users() {
            let exact = inner(&v, &w.column(k).into_owned()).norm_sqr();
            assert!(sca_lower_bound(&w, &w_old, &v, k) <= exact + 1e-12);
            let at = sca_lower_bound(&w_old, &w_old, &v, k);
            let exact_old = inner(&v, &w_old.column(k).into_owned()).norm_sqr();
            assert!((at - exact_old).abs() <= 1e-12);
        }
    }
    let w = random_w(&mut rng, &p);
    let zero = CMatrix::zeros(p.antennas(), p.num_users());
    assert_eq!(sca_lower_bound(&w, &zero, &v, 0), 0.0);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..30 {
        let p = random_sensing_problem(&mut rng, &s);
        let w_lin = random_w(&mut rng, &p);
        let w = random_w(&mut rng, &p);
        let alpha: Vec<f64> = (0..p.num_users())
            .map(|_| rng.random_range(0.0..2.0))
            .collect();
        let beta = update_beta(&p, &w_lin, &alpha);
        let mu: Vec<f64> = p.sensed.iter().map(|_| 0.3).collect();
        let eta: Vec<f64> = p
            .sensed
            .iter()
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let g = quadratic_form(&p, &beta);
        let h = linear_terms(&p, &alpha, &beta, &eta, &w_lin);
        let grad = gradient(&g, &h, &w);
        let f = |x: &CMatrix| inner_objective(&p, x, &w_lin, &alpha, &beta, &mu, &eta);
        let step = 1e-6 * w.norm() / (w.len() as f64).sqrt();
        for idx in 0..w.len() {
            for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[idx] += dir * step;
                wm[idx] -= dir * step;
                let fd = (f(&wp) - f(&wm)) / (2.0 * step);
                let an = if dir.re == 1.0 {
                    grad[idx].re
                } else {
                    grad[idx].im
                };
                let scale = grad.norm() / (grad.len() as f64).sqrt();
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(scale),
                    "{fd} vs {an}"
                );
            }
        }
    }
}

#[test]
fn block_updates_never_decrease_the_inner_objective() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let opts = SolverOptions::default();
    for _ in 0..30 {
        let p = random_sensing_problem(&mut rng, &s);
        let mut st = FpState::initialize(&p, &opts).unwrap();
        st.eta = p
            .sensed
            .iter()
            .map(|_| rng.random_range(0.0..0.5))
            .collect();
        for _ in 0..10 {
            let obj = |st: &FpState, w_lin: &CMatrix| {
                inner_objective(&p, &st.w, w_lin, &st.alpha, &st.beta, &st.mu, &st.eta)
            };
            let tol = |f: f64| 1e-9 * f.abs().max(1.0);
            let w_lin = st.w.clone();
            let f0 = obj(&st, &w_lin);
            st.beta = update_beta(&p, &st.w, &st.alpha);
            let f1 = obj(&st, &w_lin);
            assert!(f1 >= f0 - tol(f0), "beta {f0} -> {f1}");
            st.alpha = update_alpha(&p, &st.w, &st.beta);
            let f2 = obj(&st, &w_lin);
            assert!(f2 >= f1 - tol(f1), "alpha {f1} -> {f2}");
            st.mu = update_mu(&p, &st.eta, &opts).unwrap();
            let f3 = obj(&st, &w_lin);
            assert!(f3 >= f2 - tol(f2), "mu {f2} -> {f3}");
            let w_new = update_w(&p, &mut st, &opts);
            st.w_prev = std::mem::replace(&mut st.w, w_new);
            let f4 = obj(&st, &w_lin);
            assert!(f4 >= f3 - tol(f3), "w {f3} -> {f4}");
            let relinearised = obj(&st, &st.w.clone());
            assert!(relinearised >= f4 - tol(f4));
        }
    }
}

#[test]
fn single_user_without_sensing_is_matched_filter() {
    let mut s = Preset::Desk.config();
    s.users.truncate(1);
    for t in &mut s.targets {
        t.weight = 0.0;
    }
    let s = s.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let d = DecisionPair::new(vec![false], vec![false, false]);
    for _ in 0..10 {
        let c = random_candidate(&s, &d, &mut rng);
        let p = P2Problem::new(&c, &s).unwrap();
        let sol = solve_p2(&p, &SolverOptions::default()).unwrap();
        let g = &p.channels[0];
        let w = sol.w.column(0).into_owned();
        let cos = inner(g, &w).norm() / (g.norm() * w.norm());
        assert!(cos > 0.999);
    }
}

#[test]
fn solver_dominates_matched_filter_and_stays_feasible() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let opts = SolverOptions::default();
    for _ in 0..30 {
        let d = random_decision(&s, &mut rng);
        let c = random_candidate(&s, &d, &mut rng);
        let p = P2Problem::new(&c, &s).unwrap();
        let sol = solve_p2(&p, &opts).unwrap();
        assert!(sol.max_power_excess <= 1e-9);
        let mrt = mrt_beamformer(&p.channels, p.power).unwrap();
        let u_mrt = evaluate_utility(&c, &mrt, &s).unwrap().total();
        assert!(sol.utility.total() >= u_mrt - 1e-6);
        // P2Problem bookkeeping agrees with the straight-line evaluation.
        let direct = evaluate_utility(&c, &sol.w, &s).unwrap();
        assert_relative_eq!(sol.utility.comm, direct.comm, max_relative = 1e-10);
        assert_relative_eq!(sol.utility.radar, direct.radar, max_relative = 1e-10);
    }
}

#[test]
fn utility_straight_line_oracle() {
    let s = desk();
    let sys = s.system();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let d = random_decision(&s, &mut rng);
        let c = random_candidate(&s, &d, &mut rng);
        let p = P2Problem::new(&c, &s).unwrap();
        let w = random_w(&mut rng, &p);
        let m2 = (sys.symbols_per_frame - c.training_symbols) as f64;
        let mut u = 0.0;
        for k in 0..s.num_users() {
            let g = &c.comm[k].g_hat;
            let mut sig = 0.0;
            let mut intf = 0.0;
            for i in 0..s.num_users() {
                let mut acc = C64::from(0.0);
                for l in 0..sys.tx_antennas {
                    acc += g[l].conj() * w[(l, i)];
                }
                if i == k {
                    sig = acc.norm_sqr();
                } else {
                    intf += acc.norm_sqr();
                }
            }
            let sinr = sig / (intf + c.comm[k].varsigma * sys.power + s.users[k].noise_power);
            u += s.users[k].weight * m2 / sys.symbols_per_frame as f64 * (1.0 + sinr).ln();
        }
        for q in 0..s.num_targets() {
            let b = &c.radar[q];
            let r = if b.estimate {
                let gamma = sensing_gain(&w, b.sensing_angle);
                let err: f64 = (0..3)
                    .map(|l| b.terms.psi[l] / (gamma + b.terms.lambda[l]))
                    .sum();
                sys.omega_bar * err
                    + (1.0 - sys.omega_bar)
                        * (sys.xi_a
                            - sys.xi_b
                                * (gamma / (sys.xi_c * sys.power + sys.radar_noise())).log10())
            } else {
                sys.omega_bar * b.terms.psi_tilde
            };
            u -= s.targets[q].weight * r;
        }
        let got = evaluate_utility(&c, &w, &s).unwrap().total();
        assert!((got - u).abs() <= 1e-12 * u.abs().max(1.0));
        assert!((p.utility(&w).unwrap().total() - u).abs() <= 1e-10 * u.abs().max(1.0));
    }
}

#[test]
fn zero_precoder_cannot_illuminate() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let d = DecisionPair::new(vec![false; 3], vec![true, false]);
    let c = random_candidate(&s, &d, &mut rng);
    let w = CMatrix::zeros(8, 3);
    assert!(matches!(
        evaluate_utility(&c, &w, &s),
        Err(IsacError::NoIllumination { target: 0, .. })
    ));
    let d = DecisionPair::all(3, 2, false);
    let c = random_candidate(&s, &d, &mut rng);
    let u = evaluate_utility(&c, &w, &s).unwrap();
    assert_eq!(u.comm, 0.0);
}

#[test]
fn matched_filter_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let chans: Vec<CVector> = (0..4).map(|_| complex_gaussian(6, 1.0, &mut rng)).collect();
    let w = mrt_beamformer(&chans[..1], 2.0).unwrap();
    assert_relative_eq!(
        crate::linalg::frobenius_power(&w),
        2.0,
        max_relative = 1e-14
    );
    let w = mrt_beamformer(&chans, 2.0).unwrap();
    for (k, g) in chans.iter().enumerate() {
        let col = w.column(k).into_owned();
        assert_relative_eq!(col.norm_squared(), 0.5, max_relative = 1e-14);
        let cos = inner(g, &col).norm() / (g.norm() * col.norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }
    let mut bad = chans.clone();
    bad[2] = CVector::zeros(6);
    assert!(matches!(
        mrt_beamformer(&bad, 1.0),
        Err(IsacError::ZeroChannel(2))
    ));
}

#[test]
fn proxlinear_mode_tracks_matrix_inverse_mode() {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    // Compared at a budget where both modes have settled.
    let lag = SolverOptions {
        max_outer_iters: 1000,
        ..SolverOptions::default()
    };
    let prox = SolverOptions {
        w_update: WUpdateMode::ProxLinear,
        ..lag.clone()
    };
    for _ in 0..10 {
        let p = random_problem(&mut rng, &s);
        let a = solve_p2(&p, &lag).unwrap().utility.total();
        let b = solve_p2(&p, &prox).unwrap().utility.total();
        assert!((a - b).abs() <= 0.01 * a.abs(), "{a} vs {b}");
    }
}
