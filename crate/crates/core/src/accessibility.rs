//! Controllability layer: admissibility of control sequences, reachable
//! endpoints, constructive accessibility planning when 0 lies in the support
//! of every holding law, and the one-dimensional fixed-point construction.

use serde::Serialize;

use crate::dynamics::{lattice_points, lipschitz_constants, ControlSequence};
use crate::error::{Result, SimError};
use crate::integrate::Point;
use crate::process::HybridState;
use crate::switching::SwitchedSystem;

/// Default absolute tolerance on the cumulative-rate axis for support checks.
pub const SUPPORT_ETA: f64 = 1e-9;

/// Which admissibility condition failed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailedCondition {
    FirstIndex,
    FirstTimeSupport,
    TransitionPositivity(usize),
    InteriorTimeSupport(usize),
    TailCondition,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub verdict: bool,
    pub failing_condition: Option<FailedCondition>,
    pub tolerance: f64,
    pub note: Option<String>,
}

impl AdmissibilityReport {
    fn pass(eta: f64) -> Self {
        AdmissibilityReport {
            verdict: true,
            failing_condition: None,
            tolerance: eta,
            note: None,
        }
    }

    fn fail(eta: f64, cond: FailedCondition) -> Self {
        AdmissibilityReport {
            verdict: false,
            failing_condition: Some(cond),
            tolerance: eta,
            note: None,
        }
    }
}

/// Support queries for the state-conditioned laws μ_{x,s}^i, performed on the
/// raw-law axis through the cumulative-rate change of variable.
pub struct SupportOracle<'a> {
    sys: &'a SwitchedSystem,
    pub eta: f64,
}

impl<'a> SupportOracle<'a> {
    pub fn new(sys: &'a SwitchedSystem) -> Self {
        SupportOracle {
            sys,
            eta: SUPPORT_ETA,
        }
    }

    pub fn with_eta(sys: &'a SwitchedSystem, eta: f64) -> Self {
        SupportOracle { sys, eta }
    }

    /// Is `r` in the support of μ_z? Holds iff `a(x, s, r)` lies in supp μ^i.
    pub fn time_in_support(&self, z: &HybridState, r: f64) -> Result<bool> {
        let w = self.sys.cumulative_rate(z, r)?;
        Ok(self.sys.laws[z.i].support().contains(w, self.eta))
    }

    /// Does `(r, ∞)` meet the support of μ_z?
    pub fn tail_nonempty(&self, z: &HybridState, r: f64) -> Result<bool> {
        let w = self.sys.cumulative_rate(z, r)?;
        Ok(self.sys.laws[z.i].support().tail_nonempty(w, self.eta))
    }
}

/// Checks the admissibility conditions of a control sequence with respect to
/// a starting point. Always returns a report.
pub fn is_admissible(
    sys: &SwitchedSystem,
    z: &HybridState,
    cs: &ControlSequence,
) -> AdmissibilityReport {
    is_admissible_with(sys, z, cs, SUPPORT_ETA)
}

pub fn is_admissible_with(
    sys: &SwitchedSystem,
    z: &HybridState,
    cs: &ControlSequence,
    eta: f64,
) -> AdmissibilityReport {
    let oracle = SupportOracle::with_eta(sys, eta);
    let m = cs.len();
    if m == 0 {
        let mut r = AdmissibilityReport::fail(eta, FailedCondition::FirstIndex);
        r.note = Some("empty control sequence".into());
        return r;
    }
    if cs.indices[0] != z.i {
        return AdmissibilityReport::fail(eta, FailedCondition::FirstIndex);
    }
    let points = match sys.composite_flow(cs, &z.x) {
        Ok(p) => p,
        Err(e) => {
            let mut r = AdmissibilityReport::fail(eta, FailedCondition::FirstIndex);
            r.failing_condition = None;
            r.note = Some(format!("composite flow failed: {e}"));
            return r;
        }
    };
    let check = |res: Result<bool>| res.unwrap_or(false);

    if m == 1 {
        // (s + s₁, ∞) must meet the support of the pulled-back law, i.e. the
        // raw support beyond a(x, s, s₁).
        if !check(oracle.tail_nonempty(z, cs.times[0])) {
            return AdmissibilityReport::fail(eta, FailedCondition::TailCondition);
        }
        return AdmissibilityReport::pass(eta);
    }

    if !check(oracle.time_in_support(z, cs.times[0])) {
        return AdmissibilityReport::fail(eta, FailedCondition::FirstTimeSupport);
    }
    for k in 2..=m {
        let x_k = &points[k - 1];
        let q = sys.jump.eval(x_k);
        if q[(cs.indices[k - 2], cs.indices[k - 1])] <= 0.0 {
            return AdmissibilityReport::fail(eta, FailedCondition::TransitionPositivity(k));
        }
    }
    for k in 2..m {
        let zk = HybridState::new(points[k - 1].clone(), 0.0, cs.indices[k - 1]);
        if !check(oracle.time_in_support(&zk, cs.times[k - 1])) {
            return AdmissibilityReport::fail(eta, FailedCondition::InteriorTimeSupport(k));
        }
    }
    let zm = HybridState::new(points[m - 1].clone(), 0.0, cs.indices[m - 1]);
    if !check(oracle.tail_nonempty(&zm, cs.times[m - 1])) {
        return AdmissibilityReport::fail(eta, FailedCondition::TailCondition);
    }
    AdmissibilityReport::pass(eta)
}

/// Endpoint (Φ_s^i(x), s*, i_m) reached by an admissible sequence, with
/// `s* = s + s₁` for one leg and `s* = s_m` otherwise.
pub fn reach_endpoint(
    sys: &SwitchedSystem,
    z: &HybridState,
    cs: &ControlSequence,
) -> Result<HybridState> {
    let report = is_admissible(sys, z, cs);
    if !report.verdict {
        return Err(SimError::NotAdmissible(format!("{report:?}")));
    }
    let points = sys.composite_flow(cs, &z.x)?;
    let m = cs.len();
    let s_star = if m == 1 {
        z.s + cs.times[0]
    } else {
        cs.times[m - 1]
    };
    Ok(HybridState::new(
        points[m].clone(),
        s_star,
        cs.indices[m - 1],
    ))
}

/// Result of the constructive accessibility planner.
#[derive(Debug, Clone)]
pub struct PlannedSequence {
    pub sequence: ControlSequence,
    pub endpoint: Point,
    pub target_point: Point,
    pub error: f64,
    /// Largest number of WHILE iterations used on any target leg.
    pub max_while_steps: usize,
    /// The per-leg iteration bound ⌈max_l s_l · λ_max / S⌉.
    pub step_bound: usize,
}

/// Builds an admissible control sequence from (x, 0, i₁) whose endpoint lands
/// within `epsilon` of the target composite-flow endpoint, by tracking each
/// target leg with many short admissible legs and bridging between indices
/// through everywhere-positive transition paths.
///
/// Requires 0 in the support of every law and pointwise irreducible Q.
pub fn algorithm1(
    sys: &SwitchedSystem,
    x: &Point,
    target: &ControlSequence,
    epsilon: f64,
) -> Result<PlannedSequence> {
    let eta = SUPPORT_ETA;
    let m = target.len();
    if m == 0 {
        return Err(SimError::InvalidSpec("empty target sequence".into()));
    }
    for (j, law) in sys.laws.iter().enumerate() {
        if !law.support().contains_zero(eta) {
            return Err(SimError::ZeroNotInSupport { state: j });
        }
    }

    // Lipschitz budget on the unit ball around x, horizon T = 2 Σ s_l.
    let total: f64 = target.total_time();
    let horizon = 2.0 * total;
    let lo: Vec<f64> = x.iter().map(|v| v - 1.0).collect();
    let hi: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
    let seeds: Vec<Point> = lattice_points(&lo, &hi, 64)
        .into_iter()
        .filter(|p| (p - x).norm() <= 1.0)
        .collect();
    let (c_m, l_m) = lipschitz_constants(&sys.fields, &seeds, horizon, &sys.flow_config)?;
    let mut h = epsilon / ((m as f64 + 1.0) * c_m * (l_m * horizon).exp());
    let min_leg = target.times.iter().cloned().fold(f64::INFINITY, f64::min);
    h = h.min(0.5 * min_leg);

    // Short admissible cumulative-rate targets per law, with support beyond.
    let lam_min = sys.lambda_min();
    let lam_max = sys.lambda_max();
    let mut short: Vec<f64> = Vec::with_capacity(sys.n_states);
    for (j, law) in sys.laws.iter().enumerate() {
        match law.support().small_point_with_tail(lam_min * h, eta) {
            Some(s) => short.push(s),
            None => return Err(SimError::ZeroNotInSupport { state: j }),
        }
    }
    let s_floor = short.iter().cloned().fold(f64::INFINITY, f64::min);
    let step_bound =
        (target.times.iter().cloned().fold(0.0, f64::max) * lam_max / s_floor).ceil() as usize;

    let mut times: Vec<f64> = Vec::new();
    let mut indices: Vec<usize> = Vec::new();
    let mut y = x.clone();
    let mut k_counter: u32 = 1;
    let mut max_while_steps = 0usize;

    for l in 0..m {
        let i_l = target.indices[l];
        let s_l = target.times[l];
        let mut t_tilde = 0.0;
        let mut steps = 0usize;
        while t_tilde < s_l - h {
            steps += 1;
            if steps > 10 * step_bound.max(1) {
                return Err(SimError::DomainViolation(format!(
                    "leg {l} exceeded the step budget {step_bound}"
                )));
            }
            let t = sys.time_to_rate(i_l, &y, short[i_l])?;
            times.push(t);
            indices.push(i_l);
            y = sys.flow(i_l, t, &y)?;
            // Bridge back to i_l only when the loop will run again; the
            // bridge's total time halves at every global step.
            if t + t_tilde < s_l - h {
                let budget = h * 0.5f64.powi(k_counter.min(60) as i32);
                bridge(sys, &mut times, &mut indices, &mut y, i_l, i_l, budget, eta)?;
            }
            k_counter += 1;
            t_tilde += t;
        }
        max_while_steps = max_while_steps.max(steps);
        if l + 1 < m {
            let budget = h * 0.5f64.powi(k_counter.min(60) as i32);
            bridge(
                sys,
                &mut times,
                &mut indices,
                &mut y,
                i_l,
                target.indices[l + 1],
                budget,
                eta,
            )?;
            k_counter += 1;
        }
    }

    let sequence = ControlSequence::new(times, indices)?;
    let target_point = sys.composite_flow(target, x)?.last().unwrap().clone();
    let endpoint = y;
    let error = (&endpoint - &target_point).norm();
    Ok(PlannedSequence {
        sequence,
        endpoint,
        target_point,
        error,
        max_while_steps,
        step_bound,
    })
}

/// Append an index path from `from` to `to` whose transitions are positive at
/// the actual flow points and whose total time stays within `budget`.
#[allow(clippy::too_many_arguments)]
fn bridge(
    sys: &SwitchedSystem,
    times: &mut Vec<f64>,
    indices: &mut Vec<usize>,
    y: &mut Point,
    from: usize,
    to: usize,
    budget: f64,
    eta: f64,
) -> Result<()> {
    let mut scale = 1.0;
    for _ in 0..8 {
        let path = witness_path(sys, y, from, to)?;
        let inner = &path[1..path.len() - 1];
        if inner.is_empty() {
            // Direct transition; positivity was already established at y.
            return Ok(());
        }
        let per_leg = budget * scale / inner.len() as f64;
        let mut legs: Vec<(f64, usize)> = Vec::with_capacity(inner.len());
        let mut yy = y.clone();
        let mut ok = true;
        for (a, &j) in inner.iter().enumerate() {
            let cap = sys.lambda_min() * per_leg;
            let s = match sys.laws[j].support().small_point_with_tail(cap, eta) {
                Some(s) => s,
                None => return Err(SimError::ZeroNotInSupport { state: j }),
            };
            let t = sys.time_to_rate(j, &yy, s)?;
            // The jump into this leg happens at yy; check the edge there.
            let prev = if a == 0 { from } else { inner[a - 1] };
            if sys.jump.eval(&yy)[(prev, j)] <= 0.0 {
                ok = false;
                break;
            }
            yy = sys.flow(j, t, &yy)?;
            legs.push((t, j));
        }
        if ok {
            let last = *inner.last().unwrap();
            if sys.jump.eval(&yy)[(last, to)] <= 0.0 {
                ok = false;
            }
        }
        if ok {
            for (t, j) in legs {
                times.push(t);
                indices.push(j);
            }
            *y = yy;
            return Ok(());
        }
        // Positivity pattern shifted along the bridge; shrink and retry.
        scale *= 0.25;
    }
    Err(SimError::IrreducibilityPathNotFound { from, to })
}

/// Shortest index path `from = j_0 → … → j_n = to` with positive transition
/// probabilities in the pattern of Q at `y`; length is at most N + 1.
fn witness_path(sys: &SwitchedSystem, y: &Point, from: usize, to: usize) -> Result<Vec<usize>> {
    let q = sys.jump.eval(y);
    let n = sys.n_states;
    let bfs = |src: usize, dst: usize| -> Option<Vec<usize>> {
        let mut prev = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(src);
        let mut seen = vec![false; n];
        seen[src] = true;
        while let Some(a) = queue.pop_front() {
            for b in 0..n {
                if q[(a, b)] > 0.0 && !seen[b] {
                    seen[b] = true;
                    prev[b] = a;
                    if b == dst {
                        let mut path = vec![b];
                        let mut cur = b;
                        while cur != src {
                            cur = prev[cur];
                            path.push(cur);
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(b);
                }
            }
        }
        None
    };
    if from != to {
        bfs(from, to).ok_or(SimError::IrreducibilityPathNotFound { from, to })
    } else {
        // Shortest loop from `from` back to itself through some neighbour.
        let mut best: Option<Vec<usize>> = None;
        for nb in 0..n {
            if q[(from, nb)] <= 0.0 {
                continue;
            }
            if let Some(tail) = bfs(nb, from) {
                let mut path = vec![from];
                path.extend(tail);
                if best.as_ref().map(|b| path.len() < b.len()).unwrap_or(true) {
                    best = Some(path);
                }
            }
        }
        best.ok_or(SimError::IrreducibilityPathNotFound { from, to })
    }
}

/// Outcome of the Picard iteration for `Ψ = φ⁰_{t0} ∘ φ¹_{t1}` on an interval.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint1d {
    pub x_star: f64,
    pub iterations: usize,
    /// |Ψ'(x*)| estimated by central differences.
    pub contraction_factor: f64,
}

/// Picard iteration of `Ψ(x) = flow0(t0, flow1(t1, x))` from `x_init` until
/// |Ψ(x) − x| < tol. Fails with `NotContracting` when the step distances grow.
pub fn fixed_point_1d<F0, F1>(
    flow0: F0,
    flow1: F1,
    t0: f64,
    t1: f64,
    x_init: f64,
    tol: f64,
) -> Result<FixedPoint1d>
where
    F0: Fn(f64, f64) -> f64,
    F1: Fn(f64, f64) -> f64,
{
    let psi = |x: f64| flow0(t0, flow1(t1, x));
    let mut x = x_init;
    let mut prev_dist = f64::INFINITY;
    let mut grow_streak = 0usize;
    let mut iterations = 0usize;
    loop {
        let xn = psi(x);
        let dist = (xn - x).abs();
        iterations += 1;
        if dist >= prev_dist && dist > tol {
            grow_streak += 1;
            if grow_streak >= 3 {
                return Err(SimError::NotContracting {
                    factor: dist / prev_dist,
                });
            }
        } else {
            grow_streak = 0;
        }
        prev_dist = dist;
        x = xn;
        if dist < tol {
            break;
        }
        if iterations > 1_000_000 {
            return Err(SimError::NotContracting { factor: 1.0 });
        }
    }
    let h = 1e-6 * x.abs().max(1.0);
    let contraction_factor = ((psi(x + h) - psi(x - h)) / (2.0 * h)).abs();
    Ok(FixedPoint1d {
        x_star: x,
        iterations,
        contraction_factor,
    })
}

/// Accessibility candidate produced by the one-dimensional construction.
#[derive(Debug, Clone)]
pub struct AccessCandidate {
    pub z_star: HybridState,
    pub fixed_point: FixedPoint1d,
    /// Template sequence (t1, t0, …, t0, ε; 1, 0, …, 0, 1) verifying the
    /// candidate from the start (x*, 0, 1), to be re-checked by
    /// [`is_admissible`].
    pub template: ControlSequence,
    pub template_start: HybridState,
}

/// Fixed point of φ⁰_{t0} ∘ φ¹_{t1} for a 1-D pair with F⁰ vanishing at the
/// low end and F¹ at the high end of the invariant interval, packaged as an
/// accessibility candidate. Requires `t0 ∈ supp μ⁰` and `t1 ∈ supp μ¹`.
pub fn one_d_accessible_point(sys: &SwitchedSystem, t0: f64, t1: f64) -> Result<AccessCandidate> {
    if sys.dim != 1 {
        return Err(SimError::InvalidSpec("one-dimensional systems only".into()));
    }
    if !sys.laws[0].support().contains(t0, SUPPORT_ETA) {
        return Err(SimError::DomainViolation(format!(
            "t0 = {t0} is not in the support of law 0"
        )));
    }
    if !sys.laws[1].support().contains(t1, SUPPORT_ETA) {
        return Err(SimError::DomainViolation(format!(
            "t1 = {t1} is not in the support of law 1"
        )));
    }
    let (lo, hi) = match &sys.compact {
        Some(m) => {
            let (lo, hi) = m.bounding_box();
            (lo[0], hi[0])
        }
        None => (0.0, 1.0),
    };
    // Spot-check DF^i < 0 on the interval.
    for field in &sys.fields[0..2] {
        for k in 0..16 {
            let xv = lo + (hi - lo) * k as f64 / 15.0;
            let d = field.jacobian_at(&Point::from_vec(vec![xv]))[(0, 0)];
            if d >= 0.0 {
                return Err(SimError::DomainViolation(format!(
                    "field {} is not strictly contracting on [{lo}, {hi}]",
                    field.id
                )));
            }
        }
    }

    let flow_err = std::cell::RefCell::new(None);
    let mk_flow = |i: usize| {
        let err = &flow_err;
        move |t: f64, x: f64| match sys.flow(i, t, &Point::from_vec(vec![x])) {
            Ok(p) => p[0],
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                x
            }
        }
    };
    let fp = fixed_point_1d(mk_flow(0), mk_flow(1), t0, t1, 0.5 * (lo + hi), 1e-12)?;
    if let Some(e) = flow_err.into_inner() {
        return Err(e);
    }

    let rounds = 25;
    let eps_leg = (0.1 * t0).min(1e-3);
    let mut times = Vec::with_capacity(2 * rounds + 1);
    let mut indices = Vec::with_capacity(2 * rounds + 1);
    for _ in 0..rounds {
        times.push(t1);
        indices.push(1);
        times.push(t0);
        indices.push(0);
    }
    times.push(eps_leg);
    indices.push(1);
    let template = ControlSequence::new(times, indices)?;
    let x_star = Point::from_vec(vec![fp.x_star]);
    Ok(AccessCandidate {
        z_star: HybridState::new(x_star.clone(), 0.0, 0),
        fixed_point: fp,
        template,
        template_start: HybridState::new(x_star, 0.0, 1),
    })
}
