//! Alternating FP/SCA iterations.
//!
//! Notation: `α`, `β` are the quadratic-transform auxiliaries of the rates,
//! `μ` the sensing-gain auxiliaries, `η` their dual prices and `W_lin` the
//! point at which the sensing gains are linearised.

use nalgebra::{DVector, SymmetricEigen};

use super::{
    mrt_beamformer, P2Problem, SensedTarget, SolverOptions, UtilityBreakdown, WUpdateMode,
};
use crate::error::{IsacError, Result};
use crate::linalg::{frobenius_power, inner, CMatrix, C64};

const LN10: f64 = std::f64::consts::LN_10;

/// `ĝ_k^H w_k`.
pub fn a_term(p: &P2Problem, w: &CMatrix, k: usize) -> C64 {
    inner(&p.channels[k], &w.column(k).into_owned())
}

/// `Σ_i |ĝ_k^H w_i|² + ς_k P + σ_k`.
pub fn b_term(p: &P2Problem, w: &CMatrix, k: usize) -> f64 {
    let g = &p.channels[k];
    let received: f64 = (g.adjoint() * w).iter().map(|z| z.norm_sqr()).sum();
    received + p.noise[k]
}

pub fn update_beta(p: &P2Problem, w: &CMatrix, alpha: &[f64]) -> Vec<C64> {
    (0..p.num_users())
        .map(|k| {
            let s = (p.rate_weights[k] * (1.0 + alpha[k])).sqrt();
            a_term(p, w, k) * (s / b_term(p, w, k))
        })
        .collect()
}

pub fn update_alpha(p: &P2Problem, w: &CMatrix, beta: &[C64]) -> Vec<f64> {
    (0..p.num_users())
        .map(|k| {
            let wk = p.rate_weights[k];
            if wk <= 0.0 {
                return 0.0;
            }
            let l = (beta[k].conj() * a_term(p, w, k)).re / wk.sqrt();
            0.5 * (l * l + l * (l * l + 4.0).sqrt())
        })
        .collect()
}

/// Quadratic-transform surrogate of `Σ_k w_k C_k(W)`.
pub fn comm_surrogate(p: &P2Problem, w: &CMatrix, alpha: &[f64], beta: &[C64]) -> f64 {
    (0..p.num_users())
        .map(|k| {
            let wk = p.rate_weights[k];
            let s = (wk * (1.0 + alpha[k])).sqrt();
            wk * alpha[k].ln_1p() - wk * alpha[k] + 2.0 * s * (beta[k].conj() * a_term(p, w, k)).re
                - beta[k].norm_sqr() * b_term(p, w, k)
        })
        .sum()
}

/// Precoder-dependent part of a sensed target's weighted metric at gain `g`.
pub fn sensing_penalty(t: &SensedTarget, g: f64, omega_bar: f64, xi_b: f64) -> f64 {
    t.weight * (omega_bar * t.terms.posterior_error(g) - (1.0 - omega_bar) * xi_b * g.log10())
}

/// Stationarity residual of the `μ` block:
/// `a Σ_l ψ_l/(μ+λ_l)² + b/μ − η`.
pub fn mu_residual(psi: &[f64; 3], lambda: &[f64; 3], a: f64, b: f64, mu: f64, eta: f64) -> f64 {
    let s: f64 = psi
        .iter()
        .zip(lambda)
        .map(|(p, l)| p / ((mu + l) * (mu + l)))
        .sum();
    a * s + b / mu - eta
}

fn mu_slope(psi: &[f64; 3], lambda: &[f64; 3], a: f64, b: f64, mu: f64) -> f64 {
    let s: f64 = psi
        .iter()
        .zip(lambda)
        .map(|(p, l)| p / (mu + l).powi(3))
        .sum();
    -2.0 * a * s - b / (mu * mu)
}

/// Positive root of [`mu_residual`], which is strictly decreasing in `μ`.
pub fn mu_root(
    psi: &[f64; 3],
    lambda: &[f64; 3],
    a: f64,
    b: f64,
    eta: f64,
    tol: f64,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(IsacError::Bracket(format!(
            "dual price {eta} is not positive"
        )));
    }
    let f = |mu: f64| mu_residual(psi, lambda, a, b, mu, eta);
    let mut hi = 1.0;
    let mut steps = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        steps += 1;
        if steps > 2100 || !hi.is_finite() {
            return Err(IsacError::Bracket("no upper bracket for mu".into()));
        }
    }
    let mut lo = hi / 2.0;
    steps = 0;
    while f(lo) < 0.0 {
        lo /= 2.0;
        steps += 1;
        if steps > 2100 || lo == 0.0 {
            return Err(IsacError::Bracket(
                "no positive root for mu (residual negative at the origin)".into(),
            ));
        }
    }
    // Geometric bisection, then Newton steps kept inside the bracket.
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let r = f(mid);
        if r.abs() <= tol {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-6 {
            break;
        }
    }
    let mut mu = (lo * hi).sqrt();
    for _ in 0..50 {
        let r = f(mu);
        if r.abs() <= tol {
            break;
        }
        if r > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let next = mu - r / mu_slope(psi, lambda, a, b, mu);
        mu = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(mu)
}

/// Maximiser of the Lagrangian over each `μ_q`, capped at `mu_cap`.
pub fn update_mu(p: &P2Problem, eta: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    p.sensed
        .iter()
        .zip(eta)
        .map(|(t, &e)| {
            if e < 1e-12 {
                return Ok(p.mu_cap);
            }
            let a = t.weight * p.omega_bar;
            let b = t.weight * (1.0 - p.omega_bar) * p.xi_b / LN10;
            match mu_root(&t.terms.psi, &t.terms.lambda, a, b, e, opts.mu_tolerance) {
                Ok(mu) => Ok(mu.min(p.mu_cap)),
                // The residual is already negative at the origin: the
                // Lagrangian decreases in μ, so take the smallest admissible value.
                Err(IsacError::Bracket(_)) if b == 0.0 => Ok(1e-12 * p.mu_cap),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Affine minorant `2 Re(c_old^* c) − |c_old|²` of `|v^H w_k|²` at `W_old`.
pub fn sca_lower_bound(
    w: &CMatrix,
    w_old: &CMatrix,
    steering: &nalgebra::DVector<C64>,
    k: usize,
) -> f64 {
    let c = inner(steering, &w.column(k).into_owned());
    let c_old = inner(steering, &w_old.column(k).into_owned());
    2.0 * (c_old.conj() * c).re - c_old.norm_sqr()
}

/// `Σ_k |β_k|² ĝ_k ĝ_k^H`.
pub fn quadratic_form(p: &P2Problem, beta: &[C64]) -> CMatrix {
    let n = p.antennas();
    let mut g = CMatrix::zeros(n, n);
    for (h, b) in p.channels.iter().zip(beta) {
        g += h * h.adjoint() * C64::from(b.norm_sqr());
    }
    (&g + g.adjoint()) * C64::from(0.5)
}

/// Columns `h_k = √(w_k(1+α_k)) β_k ĝ_k + Σ_q η_q (v_q^H w_k^lin) v_q`.
pub fn linear_terms(
    p: &P2Problem,
    alpha: &[f64],
    beta: &[C64],
    eta: &[f64],
    w_lin: &CMatrix,
) -> CMatrix {
    let n = p.antennas();
    let k_users = p.num_users();
    let mut h = CMatrix::zeros(n, k_users);
    for k in 0..k_users {
        let s = (p.rate_weights[k] * (1.0 + alpha[k])).sqrt();
        let mut col = &p.channels[k] * (beta[k] * s);
        for (t, &e) in p.sensed.iter().zip(eta) {
            if e != 0.0 {
                let c = inner(&t.steering, &w_lin.column(k).into_owned());
                col += &t.steering * (c * e);
            }
        }
        h.set_column(k, &col);
    }
    h
}

/// Lagrangian of the linearised problem with the dual prices `η` fixed.
pub fn inner_objective(
    p: &P2Problem,
    w: &CMatrix,
    w_lin: &CMatrix,
    alpha: &[f64],
    beta: &[C64],
    mu: &[f64],
    eta: &[f64],
) -> f64 {
    let mut f = comm_surrogate(p, w, alpha, beta);
    for (i, t) in p.sensed.iter().enumerate() {
        f -= p.sensing_term(i, mu[i]);
        let lb: f64 = (0..p.num_users())
            .map(|k| sca_lower_bound(w, w_lin, &t.steering, k))
            .sum();
        f += eta[i] * (lb - mu[i]);
    }
    f
}

/// Outer objective: surrogate rates minus the sensing penalties at `μ`.
pub fn p5_objective(p: &P2Problem, w: &CMatrix, alpha: &[f64], beta: &[C64], mu: &[f64]) -> f64 {
    comm_surrogate(p, w, alpha, beta)
        - (0..p.sensed.len())
            .map(|i| p.sensing_term(i, mu[i]))
            .sum::<f64>()
}

/// Gradient `2(H − G W)` of the precoder-dependent part of the inner
/// objective, in the convention `∂F/∂Re W + j ∂F/∂Im W`.
pub fn gradient(g: &CMatrix, h: &CMatrix, w: &CMatrix) -> CMatrix {
    (h - g * w) * C64::from(2.0)
}

struct Spectral {
    vectors: CMatrix,
    values: DVector<f64>,
}

fn spectral(g: &CMatrix) -> Spectral {
    let eig = SymmetricEigen::new(g.clone());
    Spectral {
        vectors: eig.eigenvectors,
        values: eig.eigenvalues.map(|v| v.max(0.0)),
    }
}

fn lagrangian_with(sp: &Spectral, h: &CMatrix, w_old: &CMatrix, power: f64, tol: f64) -> CMatrix {
    let z = sp.vectors.adjoint() * h;
    let rows: Vec<f64> = z
        .row_iter()
        .map(|r| r.iter().map(|c| c.norm_sqr()).sum())
        .collect();
    let total: f64 = rows.iter().sum();
    if !(total > 0.0) {
        return w_old.clone();
    }
    let gmax = sp.values.max();
    let floor = 1e-12 * gmax;
    let power_at = |lam: f64| -> f64 {
        rows.iter()
            .zip(sp.values.iter())
            .map(|(r, g)| {
                let d = g + lam;
                if d > floor {
                    r / (d * d)
                } else if *r > 1e-20 * total {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .sum()
    };
    let build = |lam: f64| -> CMatrix {
        let mut scaled = z.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            let d = sp.values[i] + lam;
            let s = if d > floor { 1.0 / d } else { 0.0 };
            row *= C64::from(s);
        }
        &sp.vectors * scaled
    };
    if power_at(0.0) <= power {
        return build(0.0);
    }
    let mut lo = 0.0;
    let mut hi = (total / power).sqrt();
    for _ in 0..300 {
        let p_hi = power_at(hi);
        if power - p_hi <= tol * power || hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if power_at(mid) <= power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    build(hi)
}

/// Exact maximiser of the inner objective over the power ball:
/// `w_k = (G + λ̃ I)^{-1} h_k` with the smallest feasible `λ̃ ≥ 0`.
pub fn update_w_lagrangian(
    p: &P2Problem,
    g: &CMatrix,
    h: &CMatrix,
    w_old: &CMatrix,
    opts: &SolverOptions,
) -> CMatrix {
    lagrangian_with(&spectral(g), h, w_old, p.power, opts.lambda_tolerance)
}

/// One projected gradient step from the extrapolated point `w_tilde` with
/// step `1/f̃`, `f̃ = 2 λ_max(G)`. Returns `None` when `G = 0`.
pub fn update_w_proxlinear(
    p: &P2Problem,
    g: &CMatrix,
    h: &CMatrix,
    w_tilde: &CMatrix,
) -> Option<(CMatrix, f64)> {
    let f_tilde = 2.0 * spectral(g).values.max();
    if !(f_tilde > 0.0) {
        return None;
    }
    // f = 2(G w̃ − h): gradient of the negated objective.
    let f = (g * w_tilde - h) * C64::from(2.0);
    let target = w_tilde * C64::from(f_tilde) - f;
    let step = &target / C64::from(f_tilde);
    if frobenius_power(&step) <= p.power {
        return Some((step, f_tilde));
    }
    let norm = frobenius_power(&target).sqrt();
    Some((target * C64::from(p.power.sqrt() / norm), f_tilde))
}

/// Projected dual sub-gradient step with size `Δ_s / √t`.
pub fn update_eta(
    p: &P2Problem,
    eta: &[f64],
    w_new: &CMatrix,
    w_lin: &CMatrix,
    mu: &[f64],
    t: usize,
) -> Vec<f64> {
    let step = p.delta_s / (t.max(1) as f64).sqrt();
    p.sensed
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lb: f64 = (0..p.num_users())
                .map(|k| sca_lower_bound(w_new, w_lin, &s.steering, k))
                .sum();
            (eta[i] - step * (lb - mu[i])).max(0.0)
        })
        .collect()
}

/// Iterate of the alternating scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub w: CMatrix,
    /// Previous precoder, used for extrapolation in the prox-linear mode.
    pub w_prev: CMatrix,
    pub alpha: Vec<f64>,
    pub beta: Vec<C64>,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    /// Completed outer iterations.
    pub iter: usize,
    momentum: Option<(f64, f64)>,
}

impl FpState {
    /// Matched-filter start with auxiliaries consistent with it.
    pub fn initialize(p: &P2Problem, opts: &SolverOptions) -> Result<Self> {
        let w = mrt_beamformer(&p.channels, p.power)?;
        let alpha: Vec<f64> = (0..p.num_users()).map(|k| p.sinr(&w, k)).collect();
        let beta = update_beta(p, &w, &alpha);
        let mu = p
            .sensing_gains(&w)
            .into_iter()
            .map(|g| g.clamp(1e-12 * p.mu_cap, p.mu_cap))
            .collect();
        Ok(Self {
            w_prev: w.clone(),
            w,
            alpha,
            beta,
            mu,
            eta: vec![opts.initial_dual; p.sensed.len()],
            iter: 0,
            momentum: None,
        })
    }

    /// Runs one outer iteration and returns the outer objective.
    pub fn step(&mut self, p: &P2Problem, opts: &SolverOptions) -> Result<f64> {
        self.beta = update_beta(p, &self.w, &self.alpha);
        self.alpha = update_alpha(p, &self.w, &self.beta);
        self.mu = update_mu(p, &self.eta, opts)?;
        let w_new = update_w(p, self, opts);
        let t = self.iter + 1;
        self.eta = update_eta(p, &self.eta, &w_new, &self.w, &self.mu, t);
        self.w_prev = std::mem::replace(&mut self.w, w_new);
        self.iter = t;
        Ok(p5_objective(p, &self.w, &self.alpha, &self.beta, &self.mu))
    }
}

/// Precoder block update in the configured mode, linearised at `state.w`.
pub fn update_w(p: &P2Problem, state: &mut FpState, opts: &SolverOptions) -> CMatrix {
    let g = quadratic_form(p, &state.beta);
    let h = linear_terms(p, &state.alpha, &state.beta, &state.eta, &state.w);
    match opts.w_update {
        WUpdateMode::LagrangianInverse => update_w_lagrangian(p, &g, &h, &state.w, opts),
        WUpdateMode::ProxLinear => {
            let f_tilde = 2.0 * spectral(&g).values.max();
            let (extrapolation, d) = match state.momentum {
                None => (0.0, 1.0),
                Some((d_prev, f_prev)) => {
                    let d = 0.5 * (1.0 + (1.0 + 4.0 * d_prev * d_prev).sqrt());
                    let cap = if f_tilde > 0.0 {
                        0.9999 * (f_prev / f_tilde).sqrt()
                    } else {
                        0.0
                    };
                    (((d - 1.0) / d_prev).min(cap), d)
                }
            };
            let w_tilde = &state.w + (&state.w - &state.w_prev) * C64::from(extrapolation);
            match update_w_proxlinear(p, &g, &h, &w_tilde) {
                Some((w, f)) => {
                    state.momentum = Some((d, f));
                    w
                }
                None => update_w_lagrangian(p, &g, &h, &state.w, opts),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub objective: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2Solution {
    pub w: CMatrix,
    pub utility: UtilityBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `Σ‖w_k‖² − P` over all precoder updates.
    pub max_power_excess: f64,
    pub trace: Vec<TracePoint>,
}

pub fn solve_p2(p: &P2Problem, opts: &SolverOptions) -> Result<P2Solution> {
    run(p, opts, false)
}

/// As [`solve_p2`], also recording the objective and power per iteration.
pub fn solve_p2_traced(p: &P2Problem, opts: &SolverOptions) -> Result<P2Solution> {
    run(p, opts, true)
}

fn run(p: &P2Problem, opts: &SolverOptions, traced: bool) -> Result<P2Solution> {
    let mut state = FpState::initialize(p, opts)?;
    let mut best_w = state.w.clone();
    let mut best = p.utility(&state.w).ok();
    let mut max_excess = frobenius_power(&state.w) - p.power;
    let mut trace = Vec::new();
    let mut prev = p5_objective(p, &state.w, &state.alpha, &state.beta, &state.mu);
    let mut converged = false;
    while state.iter < opts.max_outer_iters {
        let obj = state.step(p, opts)?;
        let power = frobenius_power(&state.w);
        max_excess = max_excess.max(power - p.power);
        if traced {
            trace.push(TracePoint {
                iter: state.iter,
                objective: obj,
                power,
            });
        }
        if let Ok(u) = p.utility(&state.w) {
            if best.is_none_or(|b| u.total() > b.total()) {
                best = Some(u);
                best_w = state.w.clone();
            }
        }
        if !obj.is_finite() {
            return Err(IsacError::NonFinite("beamforming objective".into()));
        }
        if state.iter > 1 && (obj - prev).abs() <= opts.tolerance * obj.abs().max(1e-12) {
            converged = true;
            break;
        }
        prev = obj;
    }
    if !converged {
        log::debug!(
            "beamforming stopped after {} iterations without converging",
            state.iter
        );
    }
    let utility = best.ok_or(IsacError::NoIllumination {
        target: 0,
        gain: 0.0,
    })?;
    Ok(P2Solution {
        w: best_w,
        utility,
        iterations: state.iter,
        converged,
        max_power_excess: max_excess,
        trace,
    })
}
