//! Ergodicity toolkit: the exponential-drift Lyapunov function and its
//! Monte-Carlo verification, resolvent sampling, regular-point probes and
//! submersion certificates for Doeblin-point candidates.

use std::cell::RefCell;

use rand::Rng;
use serde::Serialize;

use crate::accessibility::{is_admissible, AdmissibilityReport};
use crate::dynamics::ControlSequence;
use crate::error::{Result, SimError};
use crate::law::{HoldingLaw, LawKind};
use crate::process::{simulate_replicas, HybridState, SimOptions};
use crate::quad::adaptive_simpson;
use crate::switching::SwitchedSystem;

/// Parameters of the drift function: γ = δ · β · λ_min with δ ∈ (0, 1) and
/// `G_i(t) ≤ C e^{−βt}` for every law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LyapunovParams {
    pub delta: f64,
    pub beta: f64,
    pub c: f64,
    pub gamma: f64,
}

impl LyapunovParams {
    pub fn new(delta: f64, beta: f64, c: f64, sys: &SwitchedSystem) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(SimError::InvalidSpec(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if !(beta > 0.0 && c > 0.0) {
            return Err(SimError::InvalidSpec("beta and C must be positive".into()));
        }
        for (i, law) in sys.laws.iter().enumerate() {
            let hi = if law.tbar().is_finite() {
                law.tbar()
            } else {
                40.0 / beta
            };
            for k in 0..=400 {
                let t = hi * k as f64 / 400.0;
                if law.survival(t) > c * (-beta * t).exp() + 1e-12 {
                    return Err(SimError::NoExpDecay(format!(
                        "law {i} violates G(t) ≤ C e^(−βt) at t = {t}"
                    )));
                }
            }
        }
        let gamma = delta * beta * sys.lambda_min();
        Ok(LyapunovParams {
            delta,
            beta,
            c,
            gamma,
        })
    }
}

/// Guard below which the conditioning denominator is treated as zero and the
/// drift function reported as +∞.
const DENOM_GUARD: f64 = 1e-12;

fn pulled_back_start(sys: &SwitchedSystem, z: &HybridState) -> Result<HybridState> {
    let back = sys.flow(z.i, -z.s, &z.x)?;
    Ok(HybridState::new(back, 0.0, z.i))
}

/// `E[e^{γ S₁} 1_{S₁ ≤ s}]` under the pulled-back start, by parts:
/// `e^{γs} F(s) − γ ∫₀^s e^{γr} F(r) dr` with `F = 1 − G_{z'}`.
fn exp_moment_quadrature(
    sys: &SwitchedSystem,
    z_back: &HybridState,
    gamma: f64,
    s: f64,
) -> Result<f64> {
    if s <= 0.0 {
        return Ok(0.0);
    }
    let err: RefCell<Option<SimError>> = RefCell::new(None);
    let cdf = |r: f64| -> f64 {
        match sys.survival(z_back, r) {
            Ok(g) => 1.0 - g,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let tail = cdf(s);
    let integral = adaptive_simpson(&|r: f64| (gamma * r).exp() * cdf(r), 0.0, s, 1e-12);
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok((gamma * s).exp() * tail - gamma * integral)
}

fn exp_moment_closed_form(alpha: f64, gamma: f64, s: f64) -> f64 {
    // S₁ ~ Exp(α): ∫₀^s e^{γr} α e^{−αr} dr.
    if (alpha - gamma).abs() < 1e-14 {
        return alpha * s;
    }
    alpha / (alpha - gamma) * (1.0 - (-(alpha - gamma) * s).exp())
}

/// The drift function f(x, s, i); deterministic evaluation with the
/// exponential closed form when available, quadrature otherwise. Near the
/// boundary of K the conditioning denominator vanishes and +∞ is reported.
pub fn lyapunov_f(sys: &SwitchedSystem, z: &HybridState, params: &LyapunovParams) -> Result<f64> {
    let gamma = params.gamma;
    let w0 = sys.cumulative_rate(z, 0.0)?;
    let denom = sys.laws[z.i].survival(w0);
    if denom < DENOM_GUARD {
        return Ok(f64::INFINITY);
    }
    let amp = (-gamma * z.s).exp() / denom;
    let moment = match (sys.laws[z.i].kind(), sys.rates[z.i].as_constant()) {
        (LawKind::Exponential { rate }, Some(lam)) => {
            exp_moment_closed_form(rate * lam, gamma, z.s)
        }
        _ => {
            let z_back = pulled_back_start(sys, z)?;
            exp_moment_quadrature(sys, &z_back, gamma, z.s)?
        }
    };
    Ok(amp * (moment - 1.0) + 1.0)
}

/// Monte-Carlo evaluation of the drift function: `mc_n` holding draws from the
/// pulled-back start. Returns (estimate, standard error).
pub fn lyapunov_f_mc<R: Rng + ?Sized>(
    sys: &SwitchedSystem,
    z: &HybridState,
    params: &LyapunovParams,
    mc_n: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let gamma = params.gamma;
    let w0 = sys.cumulative_rate(z, 0.0)?;
    let denom = sys.laws[z.i].survival(w0);
    if denom < DENOM_GUARD {
        return Ok((f64::INFINITY, 0.0));
    }
    let amp = (-gamma * z.s).exp() / denom;
    let z_back = pulled_back_start(sys, z)?;
    let mut draws = Vec::with_capacity(mc_n);
    for _ in 0..mc_n {
        let s1 = sys.sample_holding(&z_back, rng)?;
        draws.push(if s1 <= z.s { (gamma * s1).exp() } else { 0.0 });
    }
    let (mean, se) = crate::stats::mean_se(&draws);
    Ok((amp * (mean - 1.0) + 1.0, amp * se))
}

/// One drift verification record, emitted as JSON by the front end.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub z: HybridState,
    pub t: f64,
    pub bound: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Estimates `P_t f(z)` over replicas and checks the exponential drift bound
/// `P_t f ≤ e^{−γt} f + 1` within three standard errors.
pub fn drift_check(
    sys: &SwitchedSystem,
    z: &HybridState,
    t: f64,
    params: &LyapunovParams,
    replicas: usize,
    seed: u64,
) -> Result<DriftReport> {
    let f0 = lyapunov_f(sys, z, params)?;
    let bound = (-params.gamma * t).exp() * f0 + 1.0;
    let trajs = simulate_replicas(sys, z, replicas, seed, &SimOptions::to_time(t))?;
    let mut values = Vec::with_capacity(replicas);
    for traj in &trajs {
        let zt = traj.state_at(sys, t)?;
        values.push(lyapunov_f(sys, &zt, params)?);
    }
    let (estimate, stderr) = crate::stats::mean_se(&values);
    Ok(DriftReport {
        z: z.clone(),
        t,
        bound,
        estimate,
        stderr,
        pass: estimate <= bound + 3.0 * stderr,
    })
}

/// One draw from the resolvent kernel: run to an independent Exp(1) horizon.
pub fn resolvent_sample<R: Rng + ?Sized>(
    sys: &SwitchedSystem,
    z: &HybridState,
    rng: &mut R,
) -> Result<HybridState> {
    let u = crate::rng::unit_open_closed(rng);
    let t = -u.ln();
    let traj = crate::process::simulate(sys, z, &SimOptions::to_time(t), rng)?;
    traj.state_at(sys, t)
}

/// Scans the declared density of a raw law on `[t − radius, t + radius]`
/// intersected with the support; the point is regular iff the minimum is
/// positive. Returns (is_regular, density lower bound).
pub fn regularity_probe(law: &HoldingLaw, t: f64, radius: f64) -> Result<(bool, f64)> {
    if !law.has_density() {
        return Err(SimError::NoDensity);
    }
    let n = 1000;
    let lo = (t - radius).max(0.0);
    let hi = t + radius;
    let mut min_g = f64::INFINITY;
    let mut any = false;
    for k in 0..=n {
        let u = lo + (hi - lo) * k as f64 / n as f64;
        if law.support().contains(u, 0.0) {
            any = true;
            min_g = min_g.min(law.ac_density(u).unwrap_or(0.0));
        }
    }
    if !any {
        return Ok((false, 0.0));
    }
    Ok((min_g > 0.0, min_g))
}

/// Like [`regularity_probe`] but against the state-conditioned first-jump
/// density of μ_z, scanning through the cumulative-rate support mapping.
fn conditional_regularity(
    sys: &SwitchedSystem,
    z: &HybridState,
    t: f64,
    radius: f64,
) -> Result<(bool, f64)> {
    if !sys.laws[z.i].has_density() {
        return Err(SimError::NoDensity);
    }
    let n = 1000;
    let lo = (t - radius).max(1e-12);
    let hi = t + radius;
    let mut min_h = f64::INFINITY;
    let mut any = false;
    for k in 0..=n {
        let u = lo + (hi - lo) * k as f64 / n as f64;
        let w = sys.cumulative_rate(z, u)?;
        if sys.laws[z.i].support().contains(w, 0.0) {
            any = true;
            min_h = min_h.min(sys.jump_density(z, u)?);
        }
    }
    if !any {
        return Ok((false, 0.0));
    }
    Ok((min_h > 0.0, min_h))
}

/// Aggregated diagnostics for a Doeblin-point candidate: admissibility of the
/// sequence, rank of the time-to-endpoint map, and regularity of every leg
/// time against its conditional law. Condition failures never raise.
#[derive(Debug, Clone, Serialize)]
pub struct SubmersionCertificate {
    pub admissibility: AdmissibilityReport,
    pub rank: usize,
    pub dim: usize,
    pub rank_ok: bool,
    pub regular: Vec<bool>,
    pub density_bounds: Vec<f64>,
    pub notes: Vec<String>,
    pub all_ok: bool,
}

/// Checks the three conditions for an admissible regular submersion built on
/// `cs`, which must have m + 2 legs whose first m + 1 times sum to `total_time`.
pub fn submersion_certificate(
    sys: &SwitchedSystem,
    z: &HybridState,
    cs: &ControlSequence,
    total_time: f64,
) -> Result<SubmersionCertificate> {
    if cs.len() < 3 {
        return Err(SimError::InvalidSpec(
            "certificate needs at least m + 2 = 3 legs".into(),
        ));
    }
    let m = cs.len() - 2;
    let head_sum: f64 = cs.times[0..=m].iter().sum();
    if (head_sum - total_time).abs() > 1e-9 {
        return Err(SimError::InvalidSpec(format!(
            "first m+1 times sum to {head_sum}, expected T = {total_time}"
        )));
    }

    let mut notes = Vec::new();
    let admissibility = is_admissible(sys, z, cs);

    let (rank, rank_ok) =
        match sys.submersion_jacobian(&z.x, &cs.indices[0..=m], &cs.times[0..m], total_time) {
            Ok((_, r)) => (r, r == sys.dim),
            Err(e) => {
                notes.push(format!("submersion probe failed: {e}"));
                (0, false)
            }
        };

    let points = sys.composite_flow(cs, &z.x)?;
    let mut regular = Vec::with_capacity(cs.len());
    let mut density_bounds = Vec::with_capacity(cs.len());
    for k in 0..cs.len() {
        let zk = if k == 0 {
            z.clone()
        } else {
            HybridState::new(points[k].clone(), 0.0, cs.indices[k])
        };
        let radius = (0.05 * cs.times[k]).max(1e-3);
        match conditional_regularity(sys, &zk, cs.times[k], radius) {
            Ok((ok, bound)) => {
                regular.push(ok);
                density_bounds.push(bound);
            }
            Err(SimError::NoDensity) => {
                notes.push(format!("leg {k}: law has no density"));
                regular.push(false);
                density_bounds.push(0.0);
            }
            Err(e) => {
                notes.push(format!("leg {k}: {e}"));
                regular.push(false);
                density_bounds.push(0.0);
            }
        }
    }

    let all_ok = admissibility.verdict && rank_ok && regular.iter().all(|&b| b);
    Ok(SubmersionCertificate {
        admissibility,
        rank,
        dim: sys.dim,
        rank_ok,
        regular,
        density_bounds,
        notes,
        all_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FlowRange, VectorFieldSpec};
    use crate::integrate::Point;
    use crate::process::CompactSet;
    use crate::switching::{JumpMatrix, RateFunction};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn flip_system(law: HoldingLaw) -> SwitchedSystem {
        let f0 = VectorFieldSpec::new(0, 1, |x: &Point| -x.clone())
            .with_flow(|t, x: &Point| x * (-t).exp(), FlowRange::All);
        let f1 = VectorFieldSpec::new(1, 1, |x: &Point| Point::from_vec(vec![1.0 - x[0]]))
            .with_flow(
                |t, x: &Point| Point::from_vec(vec![1.0 + (x[0] - 1.0) * (-t).exp()]),
                FlowRange::All,
            );
        SwitchedSystem::new(
            vec![f0, f1],
            vec![law.clone(), law],
            vec![RateFunction::constant(1.0), RateFunction::constant(1.0)],
            JumpMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
        )
        .unwrap()
        .with_compact(CompactSet::unit_box(1))
    }

    fn z(x: f64, s: f64, i: usize) -> HybridState {
        HybridState::from_coords(&[x], s, i)
    }

    #[test]
    fn lyapunov_vanishes_at_s_zero() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let params = LyapunovParams::new(0.5, 1.0, 1.0, &sys).unwrap();
        assert_relative_eq!(
            lyapunov_f(&sys, &z(0.3, 0.0, 0), &params).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn exponential_closed_form_and_quadrature_agree() {
        // Exp(1) laws, λ ≡ 1, δ = 1/2: f(x, s, i) = e^{s/2} − 1.
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let params = LyapunovParams::new(0.5, 1.0, 1.0, &sys).unwrap();
        assert_relative_eq!(params.gamma, 0.5);
        for s in [0.5, 1.0, 2.0] {
            let zz = z(0.05, s, 0);
            let expect = (0.5 * s).exp() - 1.0;
            let closed = lyapunov_f(&sys, &zz, &params).unwrap();
            assert_relative_eq!(closed, expect, epsilon = 1e-12);
            // Force the quadrature path through a non-constant-looking rate.
            let z_back = pulled_back_start(&sys, &zz).unwrap();
            let m = exp_moment_quadrature(&sys, &z_back, params.gamma, s).unwrap();
            let amp = (-params.gamma * s).exp() / (-s as f64).exp();
            assert_relative_eq!(amp * (m - 1.0) + 1.0, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let params = LyapunovParams::new(0.5, 1.0, 1.0, &sys).unwrap();
        let zz = z(0.05, 2.0, 0);
        let expect = 1f64.exp() - 1.0;
        let mut rng = crate::rng::replica_rng(101, 0);
        let (mc, se) = lyapunov_f_mc(&sys, &zz, &params, 200_000, &mut rng).unwrap();
        assert!((mc - expect).abs() <= 3.0 * se, "mc = {mc}, se = {se}");
    }

    #[test]
    fn f_nonnegative_and_monotone_in_s() {
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0));
        let params = LyapunovParams::new(0.5, 1.0, 2f64.exp(), &sys).unwrap();
        let mut prev = -1.0;
        for k in 0..30 {
            let s = 1.6 * k as f64 / 29.0;
            // x chosen so the backward flow stays inside the compact.
            let zz = z(0.05, s, 0);
            let v = lyapunov_f(&sys, &zz, &params).unwrap();
            assert!(v >= -1e-10, "f({s}) = {v}");
            assert!(v >= prev - 1e-9, "f not monotone at s = {s}");
            prev = v;
        }
    }

    #[test]
    fn bad_decay_parameters_are_rejected() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        assert!(matches!(
            LyapunovParams::new(0.5, 3.0, 1.0, &sys),
            Err(SimError::NoExpDecay(_))
        ));
    }

    #[test]
    fn drift_check_examples() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let params = LyapunovParams::new(0.5, 1.0, 1.0, &sys).unwrap();
        let zz = z(0.05, 2.0, 0);

        // t = 0: the estimate is exactly f(z).
        let rep = drift_check(&sys, &zz, 0.0, &params, 50, 5).unwrap();
        let f0 = lyapunov_f(&sys, &zz, &params).unwrap();
        assert_relative_eq!(rep.estimate, f0, epsilon = 1e-10);
        assert!(rep.pass);

        let rep = drift_check(&sys, &zz, 1.0, &params, 2000, 6).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_relative_eq!(rep.bound, (-0.5f64).exp() * (1f64.exp() - 1.0) + 1.0);

        // Uniform laws through the quadrature path.
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0));
        let params = LyapunovParams::new(0.5, 1.0, 2f64.exp(), &sys).unwrap();
        let zz = z(0.05, 1.0, 0);
        for t in [0.5, 1.0, 2.0] {
            let rep = drift_check(&sys, &zz, t, &params, 2000, 7).unwrap();
            assert!(rep.pass, "t = {t}: {rep:?}");
        }
    }

    #[test]
    fn resolvent_sampling() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let zz = z(0.4, 0.0, 0);
        let a = {
            let mut rng = crate::rng::replica_rng(55, 0);
            resolvent_sample(&sys, &zz, &mut rng).unwrap()
        };
        let b = {
            let mut rng = crate::rng::replica_rng(55, 0);
            resolvent_sample(&sys, &zz, &mut rng).unwrap()
        };
        assert_eq!(a, b);

        // Frozen motion: zero fields and far-away Dirac laws keep x in place.
        let f0 = VectorFieldSpec::new(0, 1, |_: &Point| Point::from_vec(vec![0.0]))
            .with_flow(|_, x: &Point| x.clone(), FlowRange::All);
        let f1 = VectorFieldSpec::new(1, 1, |_: &Point| Point::from_vec(vec![0.0]))
            .with_flow(|_, x: &Point| x.clone(), FlowRange::All);
        let frozen = SwitchedSystem::new(
            vec![f0, f1],
            vec![HoldingLaw::dirac(1e9), HoldingLaw::dirac(1e9)],
            vec![RateFunction::constant(1.0), RateFunction::constant(1.0)],
            JumpMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
        )
        .unwrap();
        let mut rng = crate::rng::replica_rng(56, 0);
        let out = resolvent_sample(&frozen, &z(0.7, 0.0, 0), &mut rng).unwrap();
        assert_eq!(out.x[0], 0.7);
        assert_eq!(out.i, 0);

        // Mean τ-component against a quadrature of E[τ_T], T ~ Exp(1).
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let n = 4000;
        let mut rng = crate::rng::replica_rng(57, 0);
        let mut taus = Vec::with_capacity(n);
        for _ in 0..n {
            taus.push(resolvent_sample(&sys, &zz, &mut rng).unwrap().s);
        }
        let (mean, se) = crate::stats::mean_se(&taus);
        // With Exp(1) holdings the switch stream is rate-1 Poisson, so
        // E[τ_t] = 1 − e^{−t}; averaging against the Exp(1) horizon gives 1/2.
        let oracle: f64 = {
            let f = |t: f64| (-t).exp() * (1.0 - (-t).exp());
            crate::quad::adaptive_simpson(&f, 0.0, 12.0, 1e-10)
        };
        assert!(
            (mean - oracle).abs() <= 4.0 * se,
            "mean = {mean}, oracle = {oracle}, se = {se}"
        );
    }

    #[test]
    fn regularity_probe_examples() {
        let uni = HoldingLaw::uniform(0.0, 2.0);
        let (ok, bound) = regularity_probe(&uni, 1.0, 0.1).unwrap();
        assert!(ok);
        assert_relative_eq!(bound, 0.5);

        assert!(matches!(
            regularity_probe(&HoldingLaw::atom_mixture(vec![(1.0, 0.5), (2.0, 0.5)]), 1.0, 0.1),
            Err(SimError::NoDensity)
        ));

        let shifted = HoldingLaw::uniform(1.0, 2.0);
        let (ok, bound) = regularity_probe(&shifted, 0.5, 0.1).unwrap();
        assert!(!ok);
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn submersion_certificates() {
        // Constant fields, uniform laws: all three conditions hold.
        let f0 = VectorFieldSpec::new(0, 1, |_: &Point| Point::from_vec(vec![1.0]))
            .with_flow(|t, x: &Point| Point::from_vec(vec![x[0] + t]), FlowRange::All);
        let f1 = VectorFieldSpec::new(1, 1, |_: &Point| Point::from_vec(vec![-1.0]))
            .with_flow(|t, x: &Point| Point::from_vec(vec![x[0] - t]), FlowRange::All);
        let mk = |laws: (HoldingLaw, HoldingLaw)| {
            SwitchedSystem::new(
                vec![f0.clone(), f1.clone()],
                vec![laws.0, laws.1],
                vec![RateFunction::constant(1.0), RateFunction::constant(1.0)],
                JumpMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            )
            .unwrap()
        };
        let sys = mk((HoldingLaw::uniform(0.0, 2.0), HoldingLaw::uniform(0.0, 2.0)));
        // m = 1: legs (0.5, 0.7, 0.4) on indices (0, 1, 0), T = 1.2.
        let cs = ControlSequence::new(vec![0.5, 0.7, 0.4], vec![0, 1, 0]).unwrap();
        let zz = z(0.0, 0.0, 0);
        let cert = submersion_certificate(&sys, &zz, &cs, 1.2).unwrap();
        assert!(cert.all_ok, "{cert:?}");
        assert_eq!(cert.rank, 1);
        assert!(cert.regular.iter().all(|&b| b));

        // Dirac laws: the rank survives but regularity fails.
        let sys_d = mk((HoldingLaw::dirac(1.0), HoldingLaw::dirac(1.0)));
        let cs_d = ControlSequence::new(vec![1.0, 1.0, 0.5], vec![0, 1, 0]).unwrap();
        let cert = submersion_certificate(&sys_d, &zz, &cs_d, 2.0).unwrap();
        assert!(!cert.all_ok);
        assert!(cert.regular.iter().all(|&b| !b));

        // Identical fields: the rank condition fails.
        let same = SwitchedSystem::new(
            vec![f0.clone(), f0.clone()],
            vec![HoldingLaw::uniform(0.0, 2.0), HoldingLaw::uniform(0.0, 2.0)],
            vec![RateFunction::constant(1.0), RateFunction::constant(1.0)],
            JumpMatrix::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
        )
        .unwrap();
        let cert = submersion_certificate(&same, &zz, &cs, 1.2).unwrap();
        assert!(!cert.rank_ok);
        assert!(!cert.all_ok);
    }
}
