//! Acceptance criteria as library functions, so the integration test and the
//! command line run the same checks. Every tolerance and time budget lives
//! here.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use nalgebra::{DVector, Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{all_bit_vectors, exhaustive_decision, Policy};
use crate::beamforming::{
    evaluate_utility, gradient, inner_objective, linear_terms, mrt_beamformer, mu_residual,
    mu_root, quadratic_form, solve_p2, solve_p2_traced, update_alpha, update_beta, update_mu,
    update_w, BeamformerMode, CandidateState, FpState, P2Problem, SolverOptions, WUpdateMode,
};
use crate::comm::{predict_csi, CommEstimate};
use crate::config::{Preset, Scenario, ScenarioConfig, UserSpec};
use crate::decision::DecisionPair;
use crate::drol::critic_select;
use crate::drol::mlp::Mlp;
use crate::drol::quantize::quantize_masks;
use crate::error::{IsacError, Result};
use crate::harness::analysis::{overall_frequency, relative_utility_ratio};
use crate::harness::{run_experiment, ExperimentResult, PolicySpec, RunManifest};
use crate::instances::{random_candidate, random_crb, random_decision, random_pcrb};
use crate::linalg::{frobenius_power, CMatrix, C64};
use crate::radar::{
    correct_track, crb_coefficients, eigen_error_terms, evolve_true_state, gamma_displacement,
    gamma_jacobian, measurement_from_draws, predict_track, TrackState,
};
use crate::rng::standard_normal;
use crate::world::World;

pub const FIXED_POINT_SLACK_EPS: f64 = 1e3;
pub const JACOBIAN_REL_TOL: f64 = 1e-5;
pub const MLP_REL_TOL: f64 = 1e-4;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const EIGEN_PATH_TOL: f64 = 1e-10;
pub const QUANTIZER_GRID_STEPS: usize = 20;
pub const QUANTIZER_MAX_LEN: usize = 6;
pub const BLOCK_ASCENT_TOL: f64 = 1e-9;
pub const QT_TOL: f64 = 1e-8;
pub const MU_RESIDUAL_TOL: f64 = 1e-8;
pub const MU_ORACLE_REL_TOL: f64 = 1e-6;
pub const POWER_TOL: f64 = 1e-9;
pub const RATIO_THRESHOLD: f64 = 0.85;
pub const RATIO_WINDOW: usize = 300;
pub const RATIO_FROM_FRAME: usize = 2000;
pub const TAIL_FRAMES: usize = 1000;
pub const LEARNING_SEEDS: [u64; 3] = [1, 2, 3];
pub const MSE_RATIO_RANGE: (f64, f64) = (0.8, 5.0);
pub const MODE_AGREEMENT: f64 = 0.01;
pub const MODE_AGREEMENT_ITERS: usize = 1000;

/// Largest `Σ‖w_k‖² − P` observed by any acceptance check in this process.
static POWER_EXCESS: AtomicU64 = AtomicU64::new(0xFFF0_0000_0000_0000); // −∞

fn note_power(excess: f64) {
    let _ = POWER_EXCESS.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |bits| {
        (excess > f64::from_bits(bits)).then_some(excess.to_bits())
    });
}

fn observed_power_excess() -> f64 {
    f64::from_bits(POWER_EXCESS.load(Ordering::SeqCst))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Everything except the long learning runs.
    Fast,
    /// The learning runs only.
    Learning,
    All,
}

impl Suite {
    pub fn criteria(self) -> Vec<u8> {
        match self {
            Self::Fast => vec![1, 2, 3, 4, 5, 6, 8, 9, 13, 14, 7],
            Self::Learning => vec![10, 11, 12],
            Self::All => vec![1, 2, 3, 4, 5, 6, 8, 9, 10, 11, 12, 13, 14, 7],
        }
    }
}

impl FromStr for Suite {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Self::Fast),
            "learning" => Ok(Self::Learning),
            "all" => Ok(Self::All),
            other => Err(IsacError::InvalidArgument(format!(
                "unknown suite '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {} ({:.1} s of {:.0} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64()
        )
    }
}

/// Options shared by the learning criteria.
#[derive(Debug, Clone, Default)]
pub struct AcceptOptions {
    /// Write the learning runs' CSVs under this directory.
    pub output_dir: Option<PathBuf>,
}

fn desk() -> Scenario {
    Scenario::from_preset(Preset::Desk).expect("desk preset is valid")
}

fn name_of(id: u8) -> &'static str {
    match id {
        1 => "error-variance fixed point",
        2 => "finite-difference gradients",
        3 => "eigen-path identity",
        4 => "quantizer order preservation",
        5 => "block ascent and quadratic transform",
        6 => "mu root",
        7 => "power feasibility",
        8 => "solver vs matched filter",
        9 => "tiny-instance optimality",
        10 => "utility ratio to exhaustive",
        11 => "user estimation frequency trend",
        12 => "target estimation frequency trend",
        13 => "tracking consistency",
        14 => "prox-linear vs matrix-inverse",
        _ => "unknown",
    }
}

fn budget_of(id: u8) -> Duration {
    let s = match id {
        1 => 1,
        2 => 30,
        3 => 5,
        4 => 60,
        5 => 120,
        6 => 5,
        7 => 300,
        8 => 300,
        9 => 300,
        10..=12 => 1800,
        13 => 600,
        14 => 300,
        _ => 0,
    };
    Duration::from_secs(s)
}

/// Checks returning `(passed, detail)`.
type Check = Result<(bool, String)>;

/// Runs the criteria of `suite` in order, one result each.
pub fn run_suite(suite: Suite, opts: &AcceptOptions) -> Vec<CriterionResult> {
    let mut learning: Option<(Result<LearningSummary>, Duration)> = None;
    suite
        .criteria()
        .into_iter()
        .map(|id| {
            if (10..=12).contains(&id) && learning.is_none() {
                let t = Instant::now();
                learning = Some((learning_runs(opts), t.elapsed()));
            }
            let started = Instant::now();
            let check = match id {
                10..=12 => {
                    let (summary, _) = learning.as_ref().expect("learning runs computed");
                    match summary {
                        Ok(s) => Ok(s.judge(id)),
                        Err(e) => Err(IsacError::InvalidArgument(e.to_string())),
                    }
                }
                _ => run_check(id),
            };
            let elapsed = match id {
                10..=12 => learning.as_ref().map_or(Duration::ZERO, |(_, d)| *d),
                _ => started.elapsed(),
            };
            finish(id, check, elapsed)
        })
        .collect()
}

/// Runs one criterion other than the learning ones.
pub fn run_criterion(id: u8) -> CriterionResult {
    let started = Instant::now();
    let check = if (10..=12).contains(&id) {
        learning_runs(&AcceptOptions::default()).map(|s| s.judge(id))
    } else {
        run_check(id)
    };
    finish(id, check, started.elapsed())
}

fn run_check(id: u8) -> Check {
    match id {
        1 => fixed_point(),
        2 => finite_differences(),
        3 => eigen_path(),
        4 => quantizer(),
        5 => block_ascent(),
        6 => mu_roots(),
        7 => power_feasibility(),
        8 => solver_vs_mrt(),
        9 => tiny_optimality(),
        13 => tracking_consistency(),
        14 => mode_agreement(),
        _ => Err(IsacError::InvalidArgument(format!("no criterion {id}"))),
    }
}

fn finish(id: u8, check: Check, elapsed: Duration) -> CriterionResult {
    let budget = budget_of(id);
    let (ok, mut detail) = match check {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str("; over time budget");
    }
    CriterionResult {
        id,
        name: name_of(id),
        passed: ok && in_time,
        detail,
        elapsed,
        budget,
    }
}

/// Repeated prediction contracts the error variance towards the channel
/// variance geometrically.
fn fixed_point() -> Check {
    let s = desk();
    let mut worst: f64 = 0.0;
    for u in &s.users {
        for start in [u.initial_error_variance, 0.0, 2.0 * u.beta_bar] {
            let mut est = CommEstimate {
                g_hat: DVector::zeros(1),
                varsigma: start,
            };
            let e0 = (start - u.beta_bar).abs();
            let slack = FIXED_POINT_SLACK_EPS * f64::EPSILON * u.beta_bar;
            for n in 1..=1000 {
                est = predict_csi(&est, u);
                let bound = u.rho.powi(2 * n) * e0;
                let excess = ((est.varsigma - u.beta_bar).abs() - bound) / slack;
                worst = worst.max(excess);
            }
        }
    }
    Ok((
        worst <= 1.0,
        format!("worst excess over the bound {worst:.3} machine-precision slacks"),
    ))
}

/// Analytic derivatives of the motion model, the network and the precoder
/// objective against central differences.
#[allow(clippy::needless_range_loop)]
fn finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = desk().system().frame_duration();
    let mut jac: f64 = 0.0;
    for _ in 0..1000 {
        let x = Vector3::new(
            rng.random_range(-1.4..1.4),
            rng.random_range(50.0..800.0),
            rng.random_range(-40.0..40.0),
        );
        let tb = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let j = gamma_jacobian(&x, tb, t)?;
        for c in 0..3 {
            let h = 1e-6 * x[c].abs().max(1.0);
            let (mut xp, mut xm) = (x, x);
            xp[c] += h;
            xm[c] -= h;
            let fd =
                (gamma_displacement(&xp, tb, t)? - gamma_displacement(&xm, tb, t)?) / (2.0 * h);
            for r in 0..3 {
                let exact = j[(r, c)] - if r == c { 1.0 } else { 0.0 };
                jac = jac.max((fd[r] - exact).abs() / exact.abs().max(1e-7));
            }
        }
    }

    let mut mlp_err: f64 = 0.0;
    let mut kinks = 0usize;
    for _ in 0..1000 {
        let net = Mlp::new(&[4, 5, 3, 2], 0.3, &mut rng)?;
        let xs: Vec<DVector<f64>> = (0..4)
            .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let ts: Vec<DVector<f64>> = (0..4)
            .map(|_| DVector::from_fn(2, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 }))
            .collect();
        let xr: Vec<_> = xs.iter().collect();
        let tr: Vec<_> = ts.iter().collect();
        let (_, grads) = net.bce_loss_and_grad(&xr, &tr)?;
        let loss = |m: &Mlp| m.bce_loss_and_grad(&xr, &tr).map(|r| r.0);
        let h = 1e-6;
        let count: usize = grads.iter().map(|g| g.w.len() + g.b.len()).sum();
        let scale = (grads
            .iter()
            .flat_map(|g| g.w.iter().chain(g.b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            / count as f64)
            .sqrt();
        for li in 0..net.layers.len() {
            for which in 0..2 {
                let n = if which == 0 {
                    net.layers[li].w.len()
                } else {
                    net.layers[li].b.len()
                };
                for i in 0..n {
                    let bump = |m: &mut Mlp, d: f64| {
                        if which == 0 {
                            m.layers[li].w.as_mut_slice()[i] += d;
                        } else {
                            m.layers[li].b.as_mut_slice()[i] += d;
                        }
                    };
                    let (mut p, mut m) = (net.clone(), net.clone());
                    bump(&mut p, h);
                    bump(&mut m, -h);
                    // A stencil straddling an activation kink does not
                    // estimate a derivative.
                    if crosses_kink(&net, &p, &m, &xs)? {
                        kinks += 1;
                        continue;
                    }
                    let fd = (loss(&p)? - loss(&m)?) / (2.0 * h);
                    let g = if which == 0 {
                        grads[li].w.as_slice()[i]
                    } else {
                        grads[li].b.as_slice()[i]
                    };
                    mlp_err = mlp_err.max((fd - g).abs() / g.abs().max(fd.abs()).max(scale));
                }
            }
        }
    }

    let s = desk();
    let mut grad_err: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_sensing_problem(&mut rng, &s)?;
        let w_lin = random_w(&mut rng, &p);
        let w = random_w(&mut rng, &p);
        let alpha: Vec<f64> = (0..p.num_users())
            .map(|_| rng.random_range(0.0..2.0))
            .collect();
        let beta = update_beta(&p, &w_lin, &alpha);
        let mu = vec![0.3; p.sensed.len()];
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
        let scale = grad.norm() / (grad.len() as f64).sqrt();
        for idx in 0..w.len() {
            for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[idx] += dir * step;
                wm[idx] -= dir * step;
                let fd = (f(&wp) - f(&wm)) / (2.0 * step);
                let an = if dir.re == 1.0 {
                    grad[idx].re
                } else {
                    grad[idx].im
                };
                grad_err = grad_err.max((fd - an).abs() / an.abs().max(scale));
            }
        }
    }
    let ok = jac < JACOBIAN_REL_TOL && mlp_err < MLP_REL_TOL && grad_err < GRADIENT_REL_TOL;
    Ok((
        ok,
        format!(
            "worst relative errors: jacobian {jac:.2e}, network {mlp_err:.2e} \
             ({kinks} stencils across a kink skipped), precoder {grad_err:.2e}"
        ),
    ))
}

fn crosses_kink(net: &Mlp, p: &Mlp, m: &Mlp, xs: &[DVector<f64>]) -> Result<bool> {
    for x in xs {
        let base = net.activation_pattern(x)?;
        if p.activation_pattern(x)? != base || m.activation_pattern(x)? != base {
            return Ok(true);
        }
    }
    Ok(false)
}

fn eigen_path() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = random_pcrb(&mut rng);
        let crb = random_crb(&mut rng);
        let gamma = 10f64.powf(rng.random_range(-3.0..3.0));
        let terms = eigen_error_terms(&m, &crb, &[1.0; 3])?;
        let inv = Matrix3::from_diagonal(&Vector3::from(terms.lambda).map(|l| 1.0 / (l + gamma)));
        let via_eigen = terms.c * inv * terms.c.transpose();
        let direct = (m
            .try_inverse()
            .ok_or(IsacError::Singularity("prior".into()))?
            + Matrix3::from_diagonal(&crb.diagonal().map(|a| gamma / a)))
        .try_inverse()
        .ok_or(IsacError::Singularity("posterior".into()))?;
        worst = worst.max((via_eigen - direct).norm());
    }
    Ok((
        worst <= EIGEN_PATH_TOL,
        format!("worst Frobenius difference {worst:.2e}"),
    ))
}

/// Every relaxed vector on the grid, every candidate count.
fn quantizer() -> Check {
    let steps = QUANTIZER_GRID_STEPS;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let mut masks = Vec::with_capacity(QUANTIZER_MAX_LEN + 1);
    let mut checked = 0u64;
    for len in 1..=QUANTIZER_MAX_LEN {
        let mut idx = vec![0usize; len];
        let mut a = vec![0.0; len];
        loop {
            for (v, &i) in a.iter_mut().zip(&idx) {
                *v = grid[i];
            }
            quantize_masks(&a, len + 1, &mut masks)?;
            // Brute-force pairwise oracle: `ã[i] ≥ ã[j]` forces bit i ≥ bit j.
            let mut dominating = [0u64; QUANTIZER_MAX_LEN];
            for j in 0..len {
                for i in 0..len {
                    if a[i] >= a[j] {
                        dominating[j] |= 1 << i;
                    }
                }
            }
            let threshold = (0..len).fold(0u64, |m, i| if a[i] >= 0.5 { m | 1 << i } else { m });
            if masks[0] != threshold {
                return Ok((
                    false,
                    format!("first candidate of {a:?} is not the threshold vector"),
                ));
            }
            for &m in &masks {
                for (j, &dom) in dominating.iter().enumerate().take(len) {
                    if m >> j & 1 == 1 && m & dom != dom {
                        return Ok((false, format!("{a:?} gives non order-preserving {m:b}")));
                    }
                }
            }
            checked += 1;
            let mut pos = 0;
            loop {
                if pos == len {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] <= steps {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == len {
                break;
            }
        }
    }
    Ok((
        true,
        format!("{checked} relaxed vectors, every candidate order-preserving"),
    ))
}

fn random_w(rng: &mut ChaCha8Rng, p: &P2Problem) -> CMatrix {
    let w = CMatrix::from_fn(p.antennas(), p.num_users(), |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let scale = (p.power * rng.random_range(0.2..1.0) / frobenius_power(&w)).sqrt();
    w * C64::from(scale)
}

fn random_sensing_candidate(rng: &mut ChaCha8Rng, s: &Scenario) -> CandidateState {
    let mut d = random_decision(s, rng);
    d.radar[0] = true;
    random_candidate(s, &d, rng)
}

fn random_sensing_problem(rng: &mut ChaCha8Rng, s: &Scenario) -> Result<P2Problem> {
    P2Problem::new(&random_sensing_candidate(rng, s), s)
}

/// With the dual prices frozen, every block update is an ascent step and
/// the quadratic transform at its optimum equals the weighted rates.
fn block_ascent() -> Check {
    let s = desk();
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_drop: f64 = 0.0;
    let mut worst_qt: f64 = 0.0;
    for _ in 0..100 {
        let p = random_sensing_problem(&mut rng, &s)?;
        let mut st = FpState::initialize(&p, &opts)?;
        st.eta = p
            .sensed
            .iter()
            .map(|_| rng.random_range(0.0..0.5))
            .collect();
        for _ in 0..20 {
            let w_lin = st.w.clone();
            let obj = |st: &FpState, lin: &CMatrix| {
                inner_objective(&p, &st.w, lin, &st.alpha, &st.beta, &st.mu, &st.eta)
            };
            let mut values = vec![obj(&st, &w_lin)];
            st.beta = update_beta(&p, &st.w, &st.alpha);
            values.push(obj(&st, &w_lin));
            st.alpha = update_alpha(&p, &st.w, &st.beta);
            values.push(obj(&st, &w_lin));
            st.mu = update_mu(&p, &st.eta, &opts)?;
            values.push(obj(&st, &w_lin));
            let w_new = update_w(&p, &mut st, &opts);
            note_power(frobenius_power(&w_new) - p.power);
            st.w_prev = std::mem::replace(&mut st.w, w_new);
            values.push(obj(&st, &w_lin));
            values.push(obj(&st, &st.w.clone()));
            for pair in values.windows(2) {
                let drop = (pair[0] - pair[1]) / pair[0].abs().max(1.0);
                worst_drop = worst_drop.max(drop);
            }
        }
        let w = random_w(&mut rng, &p);
        let alpha: Vec<f64> = (0..p.num_users()).map(|k| p.sinr(&w, k)).collect();
        let beta = update_beta(&p, &w, &alpha);
        let direct = p.comm_utility(&w);
        let qt = crate::beamforming::comm_surrogate(&p, &w, &alpha, &beta);
        worst_qt = worst_qt.max((qt - direct).abs() / direct.abs().max(1.0));
    }
    Ok((
        worst_drop <= BLOCK_ASCENT_TOL && worst_qt <= QT_TOL,
        format!("largest relative decrease {worst_drop:.2e}, transform gap {worst_qt:.2e}"),
    ))
}

/// Independent oracle: plain bisection over the full positive range.
fn mu_bisection(psi: &[f64; 3], lambda: &[f64; 3], a: f64, b: f64, eta: f64) -> f64 {
    let f = |m: f64| {
        b / m - eta
            + (0..3)
                .map(|l| a * psi[l] / (m + lambda[l]).powi(2))
                .sum::<f64>()
    };
    let (mut lo, mut hi) = (1e-300f64, 1e300f64);
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

fn mu_roots() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut res, mut rel): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let psi = [0, 1, 2].map(|_| 10f64.powf(rng.random_range(-6.0..1.0)));
        let lambda = [0, 1, 2].map(|_| 10f64.powf(rng.random_range(-3.0..3.0)));
        let a = rng.random_range(0.0..5.0);
        let b = rng.random_range(0.01..2.0);
        let eta = 10f64.powf(rng.random_range(-4.0..2.0));
        let mu = mu_root(&psi, &lambda, a, b, eta, 1e-10)?;
        res = res.max(mu_residual(&psi, &lambda, a, b, mu, eta).abs());
        rel = rel.max((mu / mu_bisection(&psi, &lambda, a, b, eta) - 1.0).abs());
    }
    Ok((
        res < MU_RESIDUAL_TOL && rel < MU_ORACLE_REL_TOL,
        format!("worst residual {res:.2e}, worst oracle disagreement {rel:.2e}"),
    ))
}

/// Power after every precoder update of fresh solves in both modes, plus
/// every solve made by the other checks in this process.
fn power_feasibility() -> Check {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mode in [WUpdateMode::LagrangianInverse, WUpdateMode::ProxLinear] {
        let opts = SolverOptions {
            w_update: mode,
            ..SolverOptions::default()
        };
        for _ in 0..50 {
            let p = random_sensing_problem(&mut rng, &s)?;
            let sol = solve_p2_traced(&p, &opts)?;
            note_power(sol.max_power_excess);
            for t in &sol.trace {
                note_power(t.power - p.power);
            }
        }
    }
    let worst = observed_power_excess();
    Ok((
        worst <= POWER_TOL,
        format!("largest excess over the budget {worst:.2e} W"),
    ))
}

fn solver_vs_mrt() -> Check {
    let s = desk();
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::INFINITY;
    let mut mean_gain = 0.0;
    for _ in 0..100 {
        let d = random_decision(&s, &mut rng);
        let c = random_candidate(&s, &d, &mut rng);
        let p = P2Problem::new(&c, &s)?;
        let sol = solve_p2(&p, &opts)?;
        note_power(sol.max_power_excess);
        let mrt = mrt_beamformer(&p.channels, p.power)?;
        let u_mrt = evaluate_utility(&c, &mrt, &s)?.total();
        let gain = sol.utility.total() - u_mrt;
        worst = worst.min(gain);
        mean_gain += gain / 100.0;
    }
    Ok((
        worst >= 0.0,
        format!("smallest gain over the matched filter {worst:.3e}, mean gain {mean_gain:.3}"),
    ))
}

/// Two users and two targets taken from the desk preset.
pub fn tiny_scenario() -> Result<Scenario> {
    let mut cfg = Preset::Desk.config();
    let keep: Vec<UserSpec> = vec![cfg.users[0].clone(), cfg.users[2].clone()];
    cfg.users = keep;
    cfg.build()
}

/// The critic fed every decision, in shuffled order, picks what a
/// straight-line search over all decisions picks.
fn tiny_optimality() -> Check {
    let s = tiny_scenario()?;
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut world = World::new(&s, 9)?;
    for frame in 1..=200 {
        let ctx = world.begin_frame(&s)?;
        let mut comm = all_bit_vectors(s.num_users());
        let mut radar = all_bit_vectors(s.num_targets());
        comm.shuffle(&mut rng);
        radar.shuffle(&mut rng);
        let choice = critic_select(&ctx, &s, &comm, &radar, BeamformerMode::FpSca, &opts)?;
        note_power(choice.max_power_excess);
        let mut best: Option<(DecisionPair, f64)> = None;
        for d in DecisionPair::enumerate(s.num_users(), s.num_targets()) {
            let Ok(o) = ctx.solve(&s, &d, BeamformerMode::FpSca, &opts) else {
                continue;
            };
            let u = o.utility.total();
            if best.as_ref().is_none_or(|(_, b)| u > *b) {
                best = Some((d, u));
            }
        }
        let (oracle, _) = best.ok_or(IsacError::NoFeasibleCandidate)?;
        let baseline = exhaustive_decision(&ctx, &s, BeamformerMode::FpSca, &opts)?;
        if choice.decision != oracle || baseline.decision != oracle {
            return Ok((
                false,
                format!("frame {frame}: critic and exhaustive search disagree"),
            ));
        }
        world.commit(&s, ctx, &choice.decision, &choice.outcome.w)?;
    }
    Ok((true, "200 of 200 frames agree".into()))
}

/// Tracks of the high-noise desk target, always re-estimated at a fixed
/// sensing gain, against their bound.
fn tracking_consistency() -> Check {
    const TRACKS: usize = 2000;
    const FRAMES: usize = 30;
    const GAMMA: f64 = 4.0;
    let s = desk();
    let sys = s.system();
    let params = &s.targets[1];
    let t = sys.frame_duration();
    let data_symbols = sys.symbols_per_frame;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut sq = Vector3::zeros();
    let mut bound = Vector3::zeros();
    let x0 = Vector3::from(params.initial_state);
    let m0 = params.initial_pcrb_matrix();
    let l0 = m0
        .cholesky()
        .ok_or_else(|| IsacError::Singularity("initial bound".into()))?
        .l();
    for _ in 0..TRACKS {
        let z = Vector3::from_fn(|_, _| standard_normal(&mut rng));
        let mut track = TrackState {
            x_hat: x0 + l0 * z,
            pcrb: m0,
        };
        let mut x = x0;
        for _ in 0..FRAMES {
            x = evolve_true_state(&x, params, t, &mut rng)?;
            let pred = predict_track(&track, params, t)?;
            let crb = crb_coefficients(
                &pred.x_pred,
                params.velocity_angle,
                params.rcs,
                sys,
                data_symbols,
            )?;
            let z = Vector3::from_fn(|_, _| standard_normal(&mut rng));
            let x_bar = measurement_from_draws(&x, &crb, GAMMA, &z)?;
            track = correct_track(&pred, &x_bar, &crb, GAMMA)?;
        }
        let e = track.x_hat - x;
        sq += e.component_mul(&e) / TRACKS as f64;
        bound += track.pcrb.diagonal() / TRACKS as f64;
    }
    let ratio = sq.component_div(&bound);
    let (lo, hi) = MSE_RATIO_RANGE;
    let ok = ratio.iter().all(|r| (lo..=hi).contains(r));
    Ok((
        ok,
        format!(
            "MSE / bound = [{:.3}, {:.3}, {:.3}] for angle, distance, velocity",
            ratio[0], ratio[1], ratio[2]
        ),
    ))
}

fn mode_agreement() -> Check {
    let s = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let base = SolverOptions {
        max_outer_iters: MODE_AGREEMENT_ITERS,
        ..SolverOptions::default()
    };
    let prox = SolverOptions {
        w_update: WUpdateMode::ProxLinear,
        ..base.clone()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_sensing_problem(&mut rng, &s)?;
        let a = solve_p2(&p, &base)?;
        let b = solve_p2(&p, &prox)?;
        note_power(a.max_power_excess);
        note_power(b.max_power_excess);
        let (ua, ub) = (a.utility.total(), b.utility.total());
        worst = worst.max((ua - ub).abs() / ua.abs().max(ub.abs()));
    }
    Ok((
        worst <= MODE_AGREEMENT,
        format!("largest relative difference {:.3}%", 100.0 * worst),
    ))
}

/// Per-seed statistics of the learner against exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    /// Smallest moving-average utility ratio from the evaluation frame on.
    pub min_ratio: f64,
    /// Re-estimation frequency of every user over the last frames.
    pub user_freq: Vec<f64>,
    pub target_freq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningSummary {
    pub seeds: Vec<SeedSummary>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl LearningSummary {
    fn median_of(&self, f: impl Fn(&SeedSummary) -> f64) -> f64 {
        median(self.seeds.iter().map(f).collect())
    }

    pub fn judge(&self, id: u8) -> (bool, String) {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        match id {
            10 => {
                let m = self.median_of(|s| s.min_ratio);
                let per: Vec<f64> = self.seeds.iter().map(|s| s.min_ratio).collect();
                (
                    m >= RATIO_THRESHOLD,
                    format!(
                        "median lowest ratio from frame {RATIO_FROM_FRAME} {m:.3} (seeds {})",
                        fmt(&per)
                    ),
                )
            }
            11 => {
                let k = self.seeds[0].user_freq.len();
                let med: Vec<f64> = (0..k).map(|i| self.median_of(|s| s.user_freq[i])).collect();
                let ok = med.windows(2).all(|w| w[0] < w[1]);
                (ok, format!("median user frequencies [{}]", fmt(&med)))
            }
            12 => {
                let q = self.seeds[0].target_freq.len();
                let med: Vec<f64> = (0..q)
                    .map(|i| self.median_of(|s| s.target_freq[i]))
                    .collect();
                let ok = med.windows(2).all(|w| w[0] < w[1]);
                (ok, format!("median target frequencies [{}]", fmt(&med)))
            }
            _ => (false, "not a learning criterion".into()),
        }
    }
}

/// The desk configuration used by the learning criteria.
pub fn learning_config() -> ScenarioConfig {
    let mut cfg = Preset::Desk.config();
    cfg.experiment.practical_utility = false;
    cfg
}

fn summarize(seed: u64, r: &ExperimentResult) -> Result<SeedSummary> {
    let drol = r.records("drol").ok_or(IsacError::EmptySeries)?;
    let exh = r.records("exhaustive").ok_or(IsacError::EmptySeries)?;
    for rec in drol.iter().chain(exh) {
        note_power(rec.power_excess);
    }
    let ratio = relative_utility_ratio(drol, exh, RATIO_WINDOW)?;
    let min_ratio = ratio
        .iter()
        .skip(RATIO_FROM_FRAME.saturating_sub(1))
        .copied()
        .fold(f64::INFINITY, f64::min);
    let tail = &drol[drol.len().saturating_sub(TAIL_FRAMES)..];
    let k = tail.first().map_or(0, |r| r.users());
    let q = tail.first().map_or(0, |r| r.targets());
    let user_freq = (0..k)
        .map(|i| overall_frequency(&tail.iter().map(|r| r.comm_bits[i]).collect::<Vec<_>>()))
        .collect();
    let target_freq = (0..q)
        .map(|i| overall_frequency(&tail.iter().map(|r| r.radar_bits[i]).collect::<Vec<_>>()))
        .collect();
    Ok(SeedSummary {
        seed,
        min_ratio,
        user_freq,
        target_freq,
    })
}

/// Runs the learner and exhaustive search on the desk preset for every
/// seed.
pub fn learning_runs(opts: &AcceptOptions) -> Result<LearningSummary> {
    let cfg = learning_config();
    let policies = vec![
        PolicySpec {
            policy: Policy::Drol,
            beamformer: BeamformerMode::FpSca,
        },
        PolicySpec {
            policy: Policy::Exhaustive,
            beamformer: BeamformerMode::FpSca,
        },
    ];
    let seeds = LEARNING_SEEDS
        .iter()
        .map(|&seed| {
            let manifest = RunManifest::new(cfg.clone(), seed, policies.clone());
            let dir = opts
                .output_dir
                .as_ref()
                .map(|d| d.join(format!("seed-{seed}")));
            let r = run_experiment(&manifest, dir.as_deref())?;
            summarize(seed, &r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LearningSummary { seeds })
}
