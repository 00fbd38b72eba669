//! Deterministic layer: vector fields, their flows, composite flows along
//! control sequences, Jacobians, Lie brackets and submersion probes.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Result, SimError};
use crate::integrate::{integrate, FlowConfig, Point};

pub type Matrix = DMatrix<f64>;

type RhsFn = dyn Fn(&Point) -> Point + Send + Sync;
type FlowFn = dyn Fn(f64, &Point) -> Point + Send + Sync;
type JacFn = dyn Fn(&Point) -> Matrix + Send + Sync;
type HorizonFn = dyn Fn(&Point) -> f64 + Send + Sync;

/// Validity range of a closed-form flow in the time argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowRange {
    All,
    NonNegative,
    Window(f64, f64),
}

impl FlowRange {
    fn covers(&self, t: f64) -> bool {
        match *self {
            FlowRange::All => true,
            FlowRange::NonNegative => t >= 0.0,
            FlowRange::Window(lo, hi) => t >= lo && t <= hi,
        }
    }
}

/// One labeled vector field F^i with optional closed-form flow and Jacobian.
#[derive(Clone)]
pub struct VectorFieldSpec {
    pub id: usize,
    pub dim: usize,
    rhs: Arc<RhsFn>,
    closed_form_flow: Option<(Arc<FlowFn>, FlowRange)>,
    jacobian: Option<Arc<JacFn>>,
    pub analytic: bool,
    backward_horizon: Option<Arc<HorizonFn>>,
}

impl VectorFieldSpec {
    pub fn new<F>(id: usize, dim: usize, rhs: F) -> Self
    where
        F: Fn(&Point) -> Point + Send + Sync + 'static,
    {
        VectorFieldSpec {
            id,
            dim,
            rhs: Arc::new(rhs),
            closed_form_flow: None,
            jacobian: None,
            analytic: false,
            backward_horizon: None,
        }
    }

    pub fn with_flow<F>(mut self, flow: F, range: FlowRange) -> Self
    where
        F: Fn(f64, &Point) -> Point + Send + Sync + 'static,
    {
        self.closed_form_flow = Some((Arc::new(flow), range));
        self
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&Point) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_backward_horizon<F>(mut self, horizon: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        self.backward_horizon = Some(Arc::new(horizon));
        self
    }

    pub fn analytic(mut self, yes: bool) -> Self {
        self.analytic = yes;
        self
    }

    pub fn eval(&self, x: &Point) -> Point {
        (self.rhs)(x)
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form_flow.is_some()
    }

    pub fn has_declared_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Maximal backward time s^i(x); +∞ when the field is globally integrable.
    pub fn backward_horizon(&self, x: &Point) -> f64 {
        match &self.backward_horizon {
            Some(h) => h(x),
            None => f64::INFINITY,
        }
    }

    /// Flow φ^i_t(x). Closed form when declared and valid for `t`, numerical
    /// integration otherwise (negative `t` integrates the negated field).
    pub fn flow(&self, t: f64, x: &Point, cfg: &FlowConfig) -> Result<Point> {
        if t < 0.0 {
            let horizon = self.backward_horizon(x);
            if t < -horizon {
                return Err(SimError::BackwardHorizonExceeded { t, horizon });
            }
        }
        if let Some((map, range)) = &self.closed_form_flow {
            if range.covers(t) {
                return Ok(map(t, x));
            }
        }
        integrate(&|y: &Point| self.eval(y), x, t, cfg)
    }

    /// Jacobian DF^i(x): declared when available, otherwise central finite
    /// differences with per-coordinate step 1e−6·max(1, |x_j|).
    pub fn jacobian_at(&self, x: &Point) -> Matrix {
        if let Some(j) = &self.jacobian {
            return j(x);
        }
        fd_jacobian(&|y: &Point| self.eval(y), x)
    }
}

impl std::fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldSpec")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("analytic", &self.analytic)
            .field("closed_form", &self.closed_form_flow.is_some())
            .finish()
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F: Fn(&Point) -> Point>(f: &F, x: &Point) -> Matrix {
    let d_out = f(x).len();
    let d_in = x.len();
    let mut jac = Matrix::zeros(d_out, d_in);
    for j in 0..d_in {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// A deterministic switching schedule: durations `s_k > 0` and indices `i_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub times: Vec<f64>,
    pub indices: Vec<usize>,
}

impl ControlSequence {
    pub fn new(times: Vec<f64>, indices: Vec<usize>) -> Result<Self> {
        if times.len() != indices.len() {
            return Err(SimError::InvalidSpec(
                "control sequence times/indices must have equal length".into(),
            ));
        }
        if times.iter().any(|&s| !(s > 0.0)) {
            return Err(SimError::InvalidSpec(
                "control sequence times must be strictly positive".into(),
            ));
        }
        Ok(ControlSequence { times, indices })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_time(&self) -> f64 {
        self.times.iter().sum()
    }
}

/// Composite flow Φ_s^i(x) evaluated left to right. Returns all intermediate
/// points: `points[0] = x`, `points[k]` is the state after the first `k` legs.
pub fn composite_flow(
    fields: &[VectorFieldSpec],
    cs: &ControlSequence,
    x: &Point,
    cfg: &FlowConfig,
) -> Result<Vec<Point>> {
    let mut points = Vec::with_capacity(cs.len() + 1);
    points.push(x.clone());
    for (k, (&s, &i)) in cs.times.iter().zip(&cs.indices).enumerate() {
        let next = fields[i]
            .flow(s, points.last().unwrap(), cfg)
            .map_err(|e| SimError::IntegrationDiverged(format!("composite flow leg {k}: {e}")))?;
        points.push(next);
    }
    Ok(points)
}

/// Lie bracket [F^i, F^j](x) = DF^j(x) F^i(x) − DF^i(x) F^j(x).
pub fn lie_bracket(fields: &[VectorFieldSpec], i: usize, j: usize, x: &Point) -> Point {
    let fi = fields[i].eval(x);
    let fj = fields[j].eval(x);
    fields[j].jacobian_at(x) * fi - fields[i].jacobian_at(x) * fj
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketMode {
    /// Family seeded by the fields themselves.
    Weak,
    /// Family seeded by pairwise differences of the fields.
    Strong,
}

#[derive(Clone)]
enum BracketTerm {
    Field(usize),
    Diff(usize, usize),
    Bracket(usize, Box<BracketTerm>),
}

fn term_eval(fields: &[VectorFieldSpec], term: &BracketTerm, x: &Point) -> Point {
    match term {
        BracketTerm::Field(i) => fields[*i].eval(x),
        BracketTerm::Diff(i, j) => fields[*i].eval(x) - fields[*j].eval(x),
        BracketTerm::Bracket(i, v) => {
            // [F^i, V](x) = DV(x) F^i(x) − DF^i(x) V(x)
            let fi = fields[*i].eval(x);
            let vx = term_eval(fields, v, x);
            let dv = fd_jacobian(&|y: &Point| term_eval(fields, v, y), x);
            dv * fi - fields[*i].jacobian_at(x) * vx
        }
    }
}

/// Options for the bracket-rank probe.
#[derive(Debug, Clone)]
pub struct BracketOptions {
    pub depth: usize,
    pub family_cap: usize,
    pub svd_rel_tol: f64,
    pub dedup_tol: f64,
}

impl Default for BracketOptions {
    fn default() -> Self {
        BracketOptions {
            depth: 3,
            family_cap: 512,
            svd_rel_tol: 1e-8,
            dedup_tol: 1e-10,
        }
    }
}

/// Builds the iterated bracket family breadth-first up to `depth`, evaluates
/// every member at `x`, prunes duplicates by evaluated value, and returns the
/// numerical rank together with the evaluated vectors.
pub fn bracket_rank(
    fields: &[VectorFieldSpec],
    x: &Point,
    mode: BracketMode,
    opts: &BracketOptions,
) -> Result<(usize, Vec<Point>)> {
    let n = fields.len();
    let mut terms: Vec<BracketTerm> = Vec::new();
    match mode {
        BracketMode::Weak => {
            for i in 0..n {
                terms.push(BracketTerm::Field(i));
            }
        }
        BracketMode::Strong => {
            for i in 0..n {
                for j in (i + 1)..n {
                    terms.push(BracketTerm::Diff(i, j));
                }
            }
        }
    }

    let mut kept: Vec<(BracketTerm, Point)> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    for term in terms {
        let v = term_eval(fields, &term, x);
        if kept.iter().all(|(_, u)| (u - &v).norm() > opts.dedup_tol) {
            kept.push((term, v));
            frontier.push(kept.len() - 1);
        }
    }

    for _ in 0..opts.depth {
        let mut next_frontier = Vec::new();
        for &idx in &frontier {
            for i in 0..n {
                let cand = BracketTerm::Bracket(i, Box::new(kept[idx].0.clone()));
                let v = term_eval(fields, &cand, x);
                if kept.iter().all(|(_, u)| (u - &v).norm() > opts.dedup_tol) {
                    kept.push((cand, v));
                    next_frontier.push(kept.len() - 1);
                    if kept.len() > opts.family_cap {
                        return Err(SimError::DepthBudgetExceeded {
                            size: kept.len(),
                            cap: opts.family_cap,
                        });
                    }
                }
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }

    let vectors: Vec<Point> = kept.into_iter().map(|(_, v)| v).collect();
    Ok((numerical_rank(&vectors, opts.svd_rel_tol), vectors))
}

/// Rank of the span of `vectors` via singular values above `rel_tol · σ_max`.
pub fn numerical_rank(vectors: &[Point], rel_tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let d = vectors[0].len();
    let mut m = Matrix::zeros(d, vectors.len());
    for (k, v) in vectors.iter().enumerate() {
        m.set_column(k, v);
    }
    matrix_rank(&m, rel_tol)
}

pub fn matrix_rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Finite-difference Jacobian (d×m) and rank of the time-to-endpoint map
/// `Ψ(v) = φ^{i_{m+1}}_{T−Σv} ∘ Φ_v^{(i_1..i_m)}(x)` at `v = times`.
pub fn submersion_jacobian(
    fields: &[VectorFieldSpec],
    x: &Point,
    indices: &[usize],
    times: &[f64],
    total_time: f64,
    cfg: &FlowConfig,
) -> Result<(Matrix, usize)> {
    let m = times.len();
    if indices.len() != m + 1 {
        return Err(SimError::InvalidSpec(
            "submersion probe needs m times and m+1 indices".into(),
        ));
    }
    let sum: f64 = times.iter().sum();
    if sum >= total_time {
        return Err(SimError::DomainViolation(format!(
            "Σ times = {sum} must be < T = {total_time}"
        )));
    }
    let psi = |v: &[f64]| -> Result<Point> {
        let mut y = x.clone();
        for (k, &s) in v.iter().enumerate() {
            y = fields[indices[k]].flow(s, &y, cfg)?;
        }
        let rest = total_time - v.iter().sum::<f64>();
        fields[indices[m]].flow(rest, &y, cfg)
    };

    let d = x.len();
    let mut jac = Matrix::zeros(d, m);
    for k in 0..m {
        let h = (1e-6 * times[k].abs().max(1.0)).min(0.5 * times[k]);
        let mut vp = times.to_vec();
        let mut vm = times.to_vec();
        vp[k] += h;
        vm[k] -= h;
        let col = (psi(&vp)? - psi(&vm)?) / (2.0 * h);
        jac.set_column(k, &col);
    }
    // A Jacobian whose largest singular value sits at the finite-difference
    // noise floor is numerically zero, not rank one.
    let smax = jac.clone().singular_values().iter().cloned().fold(0.0, f64::max);
    let rank = if smax < 1e-6 * (1.0 + x.norm()) {
        0
    } else {
        matrix_rank(&jac, 1e-8)
    };
    Ok((jac, rank))
}

/// Sampled bounds `C ≥ sup ‖F^i‖`, `L ≥ sup ‖DF^i‖` over the time-enlarged
/// compact swept from `seed_points` by all flows up to time `horizon`.
/// A safety factor of 2 is applied to both constants.
pub fn lipschitz_constants(
    fields: &[VectorFieldSpec],
    seed_points: &[Point],
    horizon: f64,
    cfg: &FlowConfig,
) -> Result<(f64, f64)> {
    let mut c: f64 = 0.0;
    let mut l: f64 = 0.0;
    let fractions = [0.0, 0.25, 0.5, 0.75, 1.0];
    for x in seed_points {
        for field in fields {
            for &fr in &fractions {
                let y = field.flow(fr * horizon, x, cfg)?;
                for g in fields {
                    c = c.max(g.eval(&y).norm());
                    l = l.max(g.jacobian_at(&y).norm());
                }
            }
        }
    }
    Ok((2.0 * c, 2.0 * l))
}

/// Deterministic quasi-random points filling the box `[lo, hi]`.
pub fn lattice_points(lo: &[f64], hi: &[f64], n: usize) -> Vec<Point> {
    let d = lo.len();
    // Additive recurrence with per-dimension irrational strides.
    let mut alphas = Vec::with_capacity(d);
    let mut a = 0.5f64.sqrt();
    for _ in 0..d {
        a = (a + std::f64::consts::PI).fract();
        alphas.push(a);
    }
    (0..n)
        .map(|k| {
            Point::from_iterator(
                d,
                (0..d).map(|j| {
                    let u = ((k as f64 + 1.0) * alphas[j]).fract();
                    lo[j] + u * (hi[j] - lo[j])
                }),
            )
        })
        .collect()
}
