//! The (X, τ, I) process: state space K and its compact restriction K_M,
//! marked-point-process simulation, path reconstruction and jump counting.

use rand::Rng;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Result, SimError};
use crate::integrate::Point;
use crate::rng::{replica_rng, unit_open_closed};
use crate::switching::SwitchedSystem;

/// z = (x, s, i): position, backward recurrence time, environment index.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub x: Point,
    pub s: f64,
    pub i: usize,
}

impl HybridState {
    pub fn new(x: Point, s: f64, i: usize) -> Self {
        HybridState { x, s, i }
    }

    pub fn from_coords(x: &[f64], s: f64, i: usize) -> Self {
        HybridState::new(Point::from_column_slice(x), s, i)
    }
}

impl Serialize for HybridState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("HybridState", 3)?;
        st.serialize_field("x", &self.x.as_slice().to_vec())?;
        st.serialize_field("s", &self.s)?;
        st.serialize_field("i", &self.i)?;
        st.end()
    }
}

/// Axis-aligned box or closed ball used as the invariant compact M.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompactSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl CompactSet {
    pub fn unit_box(dim: usize) -> Self {
        CompactSet::Box {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        match self {
            CompactSet::Box { lo, hi } => x
                .iter()
                .enumerate()
                .all(|(j, &v)| v >= lo[j] - tol && v <= hi[j] + tol),
            CompactSet::Ball { center, radius } => {
                let c = Point::from_column_slice(center);
                (x - c).norm() <= radius + tol
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            CompactSet::Box { lo, hi } => (lo.clone(), hi.clone()),
            CompactSet::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Deterministic quasi-random points inside the set.
    pub fn sample_points(&self, n: usize) -> Vec<Point> {
        let (lo, hi) = self.bounding_box();
        let raw = crate::dynamics::lattice_points(&lo, &hi, 2 * n);
        let mut out: Vec<Point> = raw.into_iter().filter(|x| self.contains(x, 0.0)).collect();
        out.truncate(n);
        out
    }
}

/// Membership in K: backward flow defined beyond s and conditional survival
/// positive. Numerical failure of the backward flow counts as "not in K".
pub fn in_k(sys: &SwitchedSystem, z: &HybridState) -> bool {
    if z.s < 0.0 {
        return false;
    }
    if z.s >= sys.fields[z.i].backward_horizon(&z.x) {
        return false;
    }
    match sys.cumulative_rate(z, 0.0) {
        Ok(w0) => w0 < sys.laws[z.i].tbar(),
        Err(_) => false,
    }
}

/// Membership in K_M: x ∈ M, φ^i_{−s}(x) ∈ M and z ∈ K. A backward-horizon
/// failure surfaces as `false`.
pub fn in_k_m(sys: &SwitchedSystem, z: &HybridState) -> Result<bool> {
    let m = sys
        .compact
        .as_ref()
        .ok_or_else(|| SimError::InvalidSpec("no invariant compact declared".into()))?;
    if !m.contains(&z.x, 0.0) {
        return Ok(false);
    }
    if !in_k(sys, z) {
        return Ok(false);
    }
    match sys.flow(z.i, -z.s, &z.x) {
        Ok(back) => Ok(m.contains(&back, 0.0)),
        Err(SimError::BackwardHorizonExceeded { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Simulation options; the jump budget turns a mis-specified configuration
/// into a diagnostic rather than a hang.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub t_end: f64,
    pub jump_budget: usize,
    /// Number of uniformly spaced dense samples on [0, t_end], if wanted.
    pub dense: Option<usize>,
    pub check_start: bool,
}

impl SimOptions {
    pub fn to_time(t_end: f64) -> Self {
        SimOptions {
            t_end,
            jump_budget: 1_000_000,
            dense: None,
            check_start: true,
        }
    }

    pub fn with_dense(mut self, n: usize) -> Self {
        self.dense = Some(n);
        self
    }

    pub fn unchecked(mut self) -> Self {
        self.check_start = false;
        self
    }
}

/// Marked point process (T_k, Z_k) plus an optional dense sampling of the path.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    /// (T_k, Z_k) with T_0 = 0; Z_k has τ = 0 for k ≥ 1.
    pub marks: Vec<(f64, HybridState)>,
    pub t_end: f64,
    pub dense: Option<Vec<(f64, HybridState)>>,
    pub replica: u64,
}

impl TrajectoryRecord {
    /// N_t: number of switches up to and including time t.
    pub fn jump_count(&self, t: f64) -> usize {
        self.marks.iter().skip(1).filter(|(tk, _)| *tk <= t).count()
    }

    /// Reconstruct Z_t by locating the governing mark and flowing forward.
    pub fn state_at(&self, sys: &SwitchedSystem, t: f64) -> Result<HybridState> {
        if t < 0.0 || t > self.t_end {
            return Err(SimError::OutOfRange {
                t,
                t_end: self.t_end,
            });
        }
        let k = self.marks.partition_point(|(tk, _)| *tk <= t) - 1;
        let (tk, zk) = &self.marks[k];
        let dt = t - tk;
        let x = sys.flow(zk.i, dt, &zk.x)?;
        Ok(HybridState::new(x, zk.s + dt, zk.i))
    }
}

/// Run one replica of the switching process from z0 up to `opts.t_end`.
///
/// Draws U_k (holding) and V_k (target) interleaved from the caller's stream;
/// the final segment consumes only its U draw.
pub fn simulate<R: Rng + ?Sized>(
    sys: &SwitchedSystem,
    z0: &HybridState,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    if opts.check_start {
        if !in_k(sys, z0) {
            return Err(SimError::NotInK(format!(
                "start (s = {}, i = {}) violates the state-space conditions",
                z0.s, z0.i
            )));
        }
        if sys.compact.is_some() && !in_k_m(sys, z0)? {
            return Err(SimError::NotInK("start outside K_M".into()));
        }
    }
    let mut marks = vec![(0.0, z0.clone())];
    let mut t = 0.0;
    let mut z = z0.clone();
    loop {
        let u = unit_open_closed(rng);
        let holding = sys.inverse_survival(&z, u)?;
        if t + holding > opts.t_end {
            break;
        }
        t += holding;
        let x_jump = sys.flow(z.i, holding, &z.x)?;
        let v = unit_open_closed(rng);
        z = sys.post_jump(&x_jump, z.i, v);
        marks.push((t, z.clone()));
        if marks.len() - 1 > opts.jump_budget {
            return Err(SimError::JumpBudgetExceeded {
                budget: opts.jump_budget,
            });
        }
    }
    let mut record = TrajectoryRecord {
        marks,
        t_end: opts.t_end,
        dense: None,
        replica: 0,
    };
    if let Some(n) = opts.dense {
        let mut samples = Vec::with_capacity(n);
        for k in 0..n {
            let tq = opts.t_end * k as f64 / (n - 1).max(1) as f64;
            samples.push((tq, record.state_at(sys, tq)?));
        }
        record.dense = Some(samples);
    }
    Ok(record)
}

/// Independent replicas in parallel, one counter-derived stream each.
pub fn simulate_replicas(
    sys: &SwitchedSystem,
    z0: &HybridState,
    n: usize,
    master_seed: u64,
    opts: &SimOptions,
) -> Result<Vec<TrajectoryRecord>> {
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replica_rng(master_seed, k);
            let mut rec = simulate(sys, z0, opts, &mut rng)?;
            rec.replica = k;
            Ok(rec)
        })
        .collect()
}

/// Monte-Carlo estimate of the dominating jump-count bound
/// `1 + Σ_{k ≤ K} P(t ≥ T̃_k)` with i.i.d. holding draws from the law with
/// survival `H(t) = min_i G^i(λ_max t)`.
pub fn expected_jump_bound<R: Rng + ?Sized>(
    sys: &SwitchedSystem,
    t: f64,
    truncation: usize,
    replicas: usize,
    rng: &mut R,
) -> f64 {
    let mut acc = 0.0;
    for _ in 0..replicas {
        let mut tk = 0.0;
        for _ in 0..truncation {
            tk += sys.sample_dominating_holding(unit_open_closed(rng));
            if tk <= t {
                acc += 1.0;
            } else {
                break;
            }
        }
    }
    1.0 + acc / replicas as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FlowRange, VectorFieldSpec};
    use crate::law::HoldingLaw;
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
    }

    fn z(x: f64, s: f64, i: usize) -> HybridState {
        HybridState::from_coords(&[x], s, i)
    }

    #[test]
    fn in_k_examples() {
        // Uniform[0, 2] laws with λ ≡ 1: K = ℝ × [0, 2) × E.
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0));
        assert!(in_k(&sys, &z(0.3, 1.9, 0)));
        assert!(!in_k(&sys, &z(0.3, 2.0, 0)));
        assert!(in_k(&sys, &z(-5.0, 0.0, 1)));

        // Exponential laws: any finite s works.
        let sys = flip_system(HoldingLaw::exponential(1.0));
        assert!(in_k(&sys, &z(0.3, 50.0, 0)));
    }

    #[test]
    fn in_k_m_boundary_curve() {
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0))
            .with_compact(CompactSet::unit_box(1));
        // Membership iff x ∈ [0,1] and s ≤ −ln |i − x| (and s < 2).
        assert!(in_k_m(&sys, &z(0.5, 0.6, 0)).unwrap());
        assert!(!in_k_m(&sys, &z(0.5, 0.7, 0)).unwrap());
        assert!(in_k_m(&sys, &z(0.5, 0.0, 1)).unwrap());
        assert!(!in_k_m(&sys, &z(1.2, 0.0, 0)).unwrap());
    }

    #[test]
    fn dirac_first_jump_is_deterministic() {
        let sys = flip_system(HoldingLaw::dirac(1.0));
        let start = z(0.4, 0.3, 0);
        let mut rng = crate::rng::replica_rng(3, 0);
        let traj = simulate(&sys, &start, &SimOptions::to_time(0.9), &mut rng).unwrap();
        assert_eq!(traj.marks.len(), 2);
        assert_relative_eq!(traj.marks[1].0, 0.7, epsilon = 1e-10);
        assert_eq!(traj.marks[1].1.i, 1);
        assert_eq!(traj.marks[1].1.s, 0.0);
    }

    #[test]
    fn single_segment_when_no_jump_fits() {
        let sys = flip_system(HoldingLaw::dirac(1.0));
        let start = z(0.4, 0.0, 0);
        let mut rng = crate::rng::replica_rng(3, 1);
        let traj = simulate(&sys, &start, &SimOptions::to_time(0.5), &mut rng).unwrap();
        assert_eq!(traj.marks.len(), 1);
        assert_eq!(traj.jump_count(0.5), 0);
    }

    #[test]
    fn poisson_jump_count() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let start = z(0.5, 0.0, 0);
        let trajs =
            simulate_replicas(&sys, &start, 2000, 17, &SimOptions::to_time(5.0)).unwrap();
        let counts: Vec<f64> = trajs.iter().map(|t| t.jump_count(5.0) as f64).collect();
        let (mean, se) = crate::stats::mean_se(&counts);
        assert!((mean - 5.0).abs() < 4.0 * se.max(0.05), "mean = {mean}");
    }

    #[test]
    fn state_at_matches_marks_and_flow() {
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0));
        let start = z(0.5, 0.3, 0);
        let mut rng = crate::rng::replica_rng(5, 0);
        let traj = simulate(&sys, &start, &SimOptions::to_time(6.0), &mut rng).unwrap();
        assert!(traj.marks.len() > 2);

        // At a mark exactly.
        let (tk, zk) = traj.marks[1].clone();
        let at = traj.state_at(&sys, tk).unwrap();
        assert_eq!(at.i, zk.i);
        assert_relative_eq!(at.x[0], zk.x[0], epsilon = 1e-12);
        assert_relative_eq!(at.s, 0.0, epsilon = 1e-12);

        // Mid-segment equals an independent flow call.
        let tmid = 0.5 * (traj.marks[1].0 + traj.marks[2].0);
        let at = traj.state_at(&sys, tmid).unwrap();
        let dt = tmid - traj.marks[1].0;
        let oracle = sys.flow(traj.marks[1].1.i, dt, &traj.marks[1].1.x).unwrap();
        assert_relative_eq!(at.x[0], oracle[0], epsilon = 1e-10);

        // t = 0 returns the start.
        let at0 = traj.state_at(&sys, 0.0).unwrap();
        assert_eq!(at0, start);

        // τ dynamics: s + t before T₁, t − T_{N_t} after.
        let before = traj.state_at(&sys, 0.5 * traj.marks[1].0).unwrap();
        assert_relative_eq!(before.s, 0.3 + 0.5 * traj.marks[1].0, epsilon = 1e-12);
        assert_relative_eq!(at.s, dt, epsilon = 1e-12);

        assert!(matches!(
            traj.state_at(&sys, 7.0),
            Err(SimError::OutOfRange { .. })
        ));
    }

    #[test]
    fn jump_count_identities() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let start = z(0.5, 0.0, 0);
        let mut rng = crate::rng::replica_rng(8, 0);
        let traj = simulate(&sys, &start, &SimOptions::to_time(10.0), &mut rng).unwrap();
        let t1 = traj.marks[1].0;
        assert_eq!(traj.jump_count(0.5 * t1), 0);
        assert_eq!(traj.jump_count(t1), 1);
        assert_eq!(traj.jump_count(traj.t_end), traj.marks.len() - 1);
    }

    #[test]
    fn paths_stay_in_k_and_k_m() {
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0))
            .with_compact(CompactSet::unit_box(1));
        let start = z(0.5, 0.2, 0);
        let trajs = simulate_replicas(&sys, &start, 40, 23, &SimOptions::to_time(8.0)).unwrap();
        for traj in &trajs {
            for k in 0..30 {
                let t = 8.0 * k as f64 / 29.0;
                let zt = traj.state_at(&sys, t).unwrap();
                assert!(in_k(&sys, &zt), "left K at t = {t}");
                assert!(in_k_m(&sys, &zt).unwrap(), "left K_M at t = {t}");
            }
        }
    }

    #[test]
    fn x_continuous_at_jumps() {
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0));
        let start = z(0.5, 0.0, 0);
        let mut rng = crate::rng::replica_rng(31, 0);
        let traj = simulate(&sys, &start, &SimOptions::to_time(10.0), &mut rng).unwrap();
        for k in 1..traj.marks.len() {
            let (tk, zk) = &traj.marks[k];
            let (tp, zp) = &traj.marks[k - 1];
            let left = sys.flow(zp.i, tk - tp, &zp.x).unwrap();
            assert!((left - &zk.x).norm() < 1e-9);
        }
    }

    #[test]
    fn expected_jump_bound_examples() {
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let mut rng = crate::rng::replica_rng(12, 0);
        // Poisson tail sum: 1 + Σ P(t ≥ T̃_k) = 1 + E[N_t] = 1 + t.
        let b = expected_jump_bound(&sys, 5.0, 200, 4000, &mut rng);
        assert!((b - 6.0).abs() < 0.15, "bound = {b}");
        let b0 = expected_jump_bound(&sys, 0.0, 200, 100, &mut rng);
        assert_relative_eq!(b0, 1.0);

        // Uniform law: bound dominates the simulated mean.
        let sys = flip_system(HoldingLaw::uniform(0.0, 2.0));
        let mut rng = crate::rng::replica_rng(13, 0);
        let bound = expected_jump_bound(&sys, 5.0, 200, 4000, &mut rng);
        let trajs = simulate_replicas(
            &sys,
            &z(0.5, 0.0, 0),
            2000,
            14,
            &SimOptions::to_time(5.0),
        )
        .unwrap();
        let counts: Vec<f64> = trajs.iter().map(|t| t.jump_count(5.0) as f64).collect();
        let (mean, se) = crate::stats::mean_se(&counts);
        assert!(mean <= bound + 3.0 * se, "mean {mean} vs bound {bound}");
    }

    #[test]
    fn exponential_case_forgets_tau_offset() {
        // With exponential laws and constant rates, the (X, I) marginal does
        // not feel the τ component of the start.
        let sys = flip_system(HoldingLaw::exponential(1.0));
        let t = 3.0;
        let xs_a: Vec<f64> = simulate_replicas(&sys, &z(0.5, 0.0, 0), 4000, 71, &SimOptions::to_time(t))
            .unwrap()
            .iter()
            .map(|tr| tr.state_at(&sys, t).unwrap().x[0])
            .collect();
        let xs_b: Vec<f64> = simulate_replicas(&sys, &z(0.5, 2.0, 0), 4000, 72, &SimOptions::to_time(t))
            .unwrap()
            .iter()
            .map(|tr| tr.state_at(&sys, t).unwrap().x[0])
            .collect();
        let (_, p) = crate::stats::ks_two_sample(&xs_a, &xs_b);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn jump_budget_is_enforced(){
        let sys = flip_system(HoldingLaw::uniform(0.0, 0.01));
        let mut rng = crate::rng::replica_rng(90, 0);
        let opts = SimOptions {
            t_end: 10.0,
            jump_budget: 50,
            dense: None,
            check_start: true,
        };
        assert!(matches!(
            simulate(&sys, &z(0.5, 0.0, 0), &opts, &mut rng),
            Err(SimError::JumpBudgetExceeded { .. })
        ));
    }
}
