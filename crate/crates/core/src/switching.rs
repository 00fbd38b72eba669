//! Stochastic layer: rates λ^i, transition matrices Q(x), and the
//! state-conditioned holding-time kernel built from the laws μ^i.
//!
//! For z = (x, s, i) the conditional survival is
//! `G_z(t) = G^i(a(t)) / G^i(a(0))` with the cumulative rate
//! `a(t) = ∫_{−s}^t λ^i(φ^i_r(x)) dr`; the holding time is sampled through the
//! generalized inverse of `G_z`.

use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng;

use crate::dynamics::{
    bracket_rank, composite_flow, lie_bracket, submersion_jacobian, BracketMode, BracketOptions,
    ControlSequence, Matrix, VectorFieldSpec,
};
use crate::error::{Result, SimError};
use crate::integrate::{integrate_until_rate, FlowConfig, Point};
use crate::law::HoldingLaw;
use crate::process::{CompactSet, HybridState};
use crate::quad::adaptive_simpson;

type RateFn = dyn Fn(&Point) -> f64 + Send + Sync;
type MatrixFn = dyn Fn(&Point) -> Matrix + Send + Sync;

/// Jump rate λ^i with declared positive bounds.
#[derive(Clone)]
pub struct RateFunction {
    eval: Arc<RateFn>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    constant: Option<f64>,
}

impl RateFunction {
    pub fn constant(value: f64) -> Self {
        RateFunction {
            eval: Arc::new(move |_| value),
            lambda_min: value,
            lambda_max: value,
            constant: Some(value),
        }
    }

    pub fn from_fn<F>(f: F, lambda_min: f64, lambda_max: f64) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        RateFunction {
            eval: Arc::new(f),
            lambda_min,
            lambda_max,
            constant: None,
        }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }
}

impl std::fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RateFunction")
            .field("lambda_min", &self.lambda_min)
            .field("lambda_max", &self.lambda_max)
            .field("constant", &self.constant)
            .finish()
    }
}

/// Row-stochastic transition matrix x ↦ Q(x) with zero diagonal.
#[derive(Clone)]
pub struct JumpMatrix {
    eval: Arc<MatrixFn>,
    pub n: usize,
    pub globally_irreducible: bool,
    /// Closed walk through E whose edges have q > 0 for every x, when declared.
    pub witness_cycle: Option<Vec<usize>>,
}

impl JumpMatrix {
    pub fn constant(q: Matrix) -> Self {
        let n = q.nrows();
        JumpMatrix {
            eval: Arc::new(move |_| q.clone()),
            n,
            globally_irreducible: true,
            witness_cycle: None,
        }
    }

    pub fn from_fn<F>(f: F, n: usize) -> Self
    where
        F: Fn(&Point) -> Matrix + Send + Sync + 'static,
    {
        JumpMatrix {
            eval: Arc::new(f),
            n,
            globally_irreducible: false,
            witness_cycle: None,
        }
    }

    pub fn with_witness_cycle(mut self, cycle: Vec<usize>) -> Self {
        self.globally_irreducible = true;
        self.witness_cycle = Some(cycle);
        self
    }

    pub fn not_globally_irreducible(mut self) -> Self {
        self.globally_irreducible = false;
        self
    }

    pub fn eval(&self, x: &Point) -> Matrix {
        (self.eval)(x)
    }
}

impl std::fmt::Debug for JumpMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JumpMatrix")
            .field("n", &self.n)
            .field("globally_irreducible", &self.globally_irreducible)
            .finish()
    }
}

/// The full switched system {F^i, μ^i, λ^i, Q} with optional invariant compact.
#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    pub fields: Vec<VectorFieldSpec>,
    pub laws: Vec<HoldingLaw>,
    pub rates: Vec<RateFunction>,
    pub jump: JumpMatrix,
    pub dim: usize,
    pub n_states: usize,
    pub compact: Option<CompactSet>,
    pub flow_config: FlowConfig,
}

impl SwitchedSystem {
    pub fn new(
        fields: Vec<VectorFieldSpec>,
        laws: Vec<HoldingLaw>,
        rates: Vec<RateFunction>,
        jump: JumpMatrix,
    ) -> Result<Self> {
        let n = fields.len();
        if n == 0 || laws.len() != n || rates.len() != n || jump.n != n {
            return Err(SimError::InvalidSpec(format!(
                "component counts disagree: {} fields, {} laws, {} rates, Q is {}x{}",
                n,
                laws.len(),
                rates.len(),
                jump.n,
                jump.n
            )));
        }
        let dim = fields[0].dim;
        if fields.iter().any(|f| f.dim != dim) {
            return Err(SimError::InvalidSpec("fields disagree on dimension".into()));
        }
        let sys = SwitchedSystem {
            fields,
            laws,
            rates,
            jump,
            dim,
            n_states: n,
            compact: None,
            flow_config: FlowConfig::default(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_compact(mut self, m: CompactSet) -> Self {
        self.compact = Some(m);
        self
    }

    pub fn with_flow_config(mut self, cfg: FlowConfig) -> Self {
        self.flow_config = cfg;
        self
    }

    /// Spot-checks of structural invariants at assembly time.
    pub fn validate(&self) -> Result<()> {
        self.flow_config.validate()?;
        for law in &self.laws {
            law.validate()?;
        }
        let probes = self.probe_points(32);
        for (i, rate) in self.rates.iter().enumerate() {
            if !(rate.lambda_min > 0.0) || rate.lambda_max < rate.lambda_min {
                return Err(SimError::InvalidSpec(format!(
                    "rate {i} needs 0 < lambda_min ≤ lambda_max"
                )));
            }
            for x in &probes {
                let v = rate.eval(x);
                if v < rate.lambda_min - 1e-9 || v > rate.lambda_max + 1e-9 {
                    return Err(SimError::InvalidSpec(format!(
                        "rate {i} leaves its declared bounds at {x:?}: {v}"
                    )));
                }
            }
        }
        for x in &probes {
            let q = self.jump.eval(x);
            if q.nrows() != self.n_states || q.ncols() != self.n_states {
                return Err(SimError::InvalidSpec("Q has wrong shape".into()));
            }
            for i in 0..self.n_states {
                if q[(i, i)] != 0.0 {
                    return Err(SimError::InvalidSpec(format!(
                        "Q diagonal must be zero, got q[{i},{i}] = {}",
                        q[(i, i)]
                    )));
                }
                let row: f64 = q.row(i).iter().sum();
                if (row - 1.0).abs() > 1e-12 {
                    return Err(SimError::InvalidSpec(format!(
                        "row {i} of Q sums to {row} at {x:?}"
                    )));
                }
            }
            if let Some(cycle) = &self.jump.witness_cycle {
                for w in cycle.windows(2) {
                    if q[(w[0], w[1])] <= 0.0 {
                        return Err(SimError::InvalidSpec(format!(
                            "declared witness edge {} → {} vanishes at {x:?}",
                            w[0], w[1]
                        )));
                    }
                }
            }
        }
        // Declared closed-form flows must differentiate back to the field.
        for field in &self.fields {
            if !field.has_closed_form() {
                continue;
            }
            for x in probes.iter().take(8) {
                for t in [0.05, 0.4, 1.1] {
                    let h = 1e-6;
                    let fwd = field.flow(t + h, x, &self.flow_config)?;
                    let bwd = field.flow(t - h, x, &self.flow_config)?;
                    let deriv = (fwd - bwd) / (2.0 * h);
                    let at = field.flow(t, x, &self.flow_config)?;
                    let rhs = field.eval(&at);
                    if (deriv - &rhs).norm() > 1e-5 * (1.0 + rhs.norm()) {
                        return Err(SimError::InvalidSpec(format!(
                            "closed-form flow of field {} disagrees with its rhs at t = {t}",
                            field.id
                        )));
                    }
                }
            }
        }
        // Forward-invariance spot-check of the declared compact.
        if let Some(m) = &self.compact {
            for x in m.sample_points(16) {
                for field in &self.fields {
                    for t in [0.1, 0.5, 2.0] {
                        let y = field.flow(t, &x, &self.flow_config)?;
                        if !m.contains(&y, 1e-7) {
                            return Err(SimError::InvalidSpec(format!(
                                "compact is not invariant: field {} leaves it from {x:?} at t = {t}",
                                field.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn probe_points(&self, n: usize) -> Vec<Point> {
        match &self.compact {
            Some(m) => m.sample_points(n),
            None => crate::dynamics::lattice_points(
                &vec![-1.0; self.dim],
                &vec![1.0; self.dim],
                n,
            ),
        }
    }

    pub fn lambda_max(&self) -> f64 {
        self.rates.iter().map(|r| r.lambda_max).fold(0.0, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.rates
            .iter()
            .map(|r| r.lambda_min)
            .fold(f64::INFINITY, f64::min)
    }

    // ---- deterministic layer -------------------------------------------------

    pub fn flow(&self, i: usize, t: f64, x: &Point) -> Result<Point> {
        self.fields[i].flow(t, x, &self.flow_config)
    }

    pub fn composite_flow(&self, cs: &ControlSequence, x: &Point) -> Result<Vec<Point>> {
        composite_flow(&self.fields, cs, x, &self.flow_config)
    }

    pub fn jacobian(&self, i: usize, x: &Point) -> Matrix {
        self.fields[i].jacobian_at(x)
    }

    pub fn lie_bracket(&self, i: usize, j: usize, x: &Point) -> Point {
        lie_bracket(&self.fields, i, j, x)
    }

    pub fn bracket_rank(
        &self,
        x: &Point,
        mode: BracketMode,
        opts: &BracketOptions,
    ) -> Result<(usize, Vec<Point>)> {
        bracket_rank(&self.fields, x, mode, opts)
    }

    pub fn submersion_jacobian(
        &self,
        x: &Point,
        indices: &[usize],
        times: &[f64],
        total_time: f64,
    ) -> Result<(Matrix, usize)> {
        submersion_jacobian(&self.fields, x, indices, times, total_time, &self.flow_config)
    }

    // ---- holding-time kernel -------------------------------------------------

    /// Cumulative rate `a(t) = ∫_{−s}^t λ^i(φ^i_r(x)) dr`, exact for constant λ.
    pub fn cumulative_rate(&self, z: &HybridState, t: f64) -> Result<f64> {
        if t < -z.s {
            return Err(SimError::DomainViolation(format!(
                "cumulative rate needs t ≥ −s, got t = {t}, s = {}",
                z.s
            )));
        }
        if let Some(lam) = self.rates[z.i].as_constant() {
            return Ok(lam * (t + z.s));
        }
        let field = &self.fields[z.i];
        let rate = &self.rates[z.i];
        let err: RefCell<Option<SimError>> = RefCell::new(None);
        let integrand = |r: f64| -> f64 {
            match field.flow(r, &z.x, &self.flow_config) {
                Ok(y) => rate.eval(&y),
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let val = adaptive_simpson(&integrand, -z.s, t, 1e-10);
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(val)
    }

    /// Conditional survival `G_z(t)`; fails with `NotInK` when the conditioning
    /// denominator vanishes.
    pub fn survival(&self, z: &HybridState, t: f64) -> Result<f64> {
        let law = &self.laws[z.i];
        let denom = law.survival(self.cumulative_rate(z, 0.0)?);
        if denom <= 0.0 {
            return Err(SimError::NotInK(format!(
                "survival denominator vanishes at s = {}",
                z.s
            )));
        }
        Ok(law.survival(self.cumulative_rate(z, t)?) / denom)
    }

    /// Generalized inverse `ψ_z(u) = inf{r ≥ 0 : G_z(r) ≤ u}` for `u ∈ (0, 1]`.
    ///
    /// Computed by pulling the draw back through the raw law and solving the
    /// monotone cumulative-rate equation, which lands on the left edge of any
    /// survival plateau; time-axis accuracy is 1e−10 or better.
    pub fn inverse_survival(&self, z: &HybridState, u: f64) -> Result<f64> {
        let law = &self.laws[z.i];
        let w0 = self.cumulative_rate(z, 0.0)?;
        let g0 = law.survival(w0);
        if g0 <= 0.0 {
            return Err(SimError::NotInK(format!(
                "conditional survival undefined at s = {}",
                z.s
            )));
        }
        let wstar = law.inverse_survival(u * g0);
        if wstar <= w0 {
            return Ok(0.0);
        }
        if let Some(lam) = self.rates[z.i].as_constant() {
            return Ok((wstar - w0) / lam);
        }
        let rate = &self.rates[z.i];
        if self.fields[z.i].has_closed_form() {
            self.solve_rate_time(z, w0, wstar)
        } else {
            let field = &self.fields[z.i];
            let t_cap = 1.1 * (wstar - w0) / rate.lambda_min + 1.0;
            let (t, _) = integrate_until_rate(
                &|y: &Point| field.eval(y),
                &|y: &Point| rate.eval(y),
                &z.x,
                w0,
                wstar,
                &self.flow_config,
                t_cap,
            )?;
            Ok(t)
        }
    }

    /// Safeguarded Newton on `a(r) = w*` using quadrature evaluations.
    fn solve_rate_time(&self, z: &HybridState, w0: f64, wstar: f64) -> Result<f64> {
        let rate = &self.rates[z.i];
        let field = &self.fields[z.i];
        let need = wstar - w0;
        let mut lo = need / rate.lambda_max;
        let mut hi = need / rate.lambda_min;
        let mut r = (need / rate.eval(&z.x)).clamp(lo, hi);
        for _ in 0..200 {
            let a_r = self.cumulative_rate(z, r)?;
            let err = a_r - wstar;
            if err.abs() <= 1e-12 * (1.0 + wstar.abs()) {
                return Ok(r);
            }
            if err > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let y = field.flow(r, &z.x, &self.flow_config)?;
            let newton = r - err / rate.eval(&y).max(1e-300);
            r = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-14 * (1.0 + hi) {
                return Ok(0.5 * (lo + hi));
            }
        }
        Ok(r)
    }

    /// Draw a holding time from `μ_z` with the caller's stream.
    pub fn sample_holding<R: Rng + ?Sized>(&self, z: &HybridState, rng: &mut R) -> Result<f64> {
        let u = crate::rng::unit_open_closed(rng);
        self.inverse_survival(z, u)
    }

    /// `t(x, i, S) = inf{t ≥ 0 : ∫_0^t λ^i(φ^i_u(x)) du ≥ S}`.
    pub fn time_to_rate(&self, i: usize, x: &Point, target: f64) -> Result<f64> {
        if target <= 0.0 {
            return Ok(0.0);
        }
        if let Some(lam) = self.rates[i].as_constant() {
            return Ok(target / lam);
        }
        let z = HybridState::new(x.clone(), 0.0, i);
        if self.fields[i].has_closed_form() {
            self.solve_rate_time(&z, 0.0, target)
        } else {
            let rate = &self.rates[i];
            let t_cap = 1.1 * target / rate.lambda_min + 1.0;
            let field = &self.fields[i];
            let (t, _) = integrate_until_rate(
                &|y: &Point| field.eval(y),
                &|y: &Point| rate.eval(y),
                x,
                0.0,
                target,
                &self.flow_config,
                t_cap,
            )?;
            Ok(t)
        }
    }

    /// Post-jump state: `j` chosen by the half-open partition of (0, 1] into
    /// cumulative `q_{i,·}(x)` blocks; τ resets to 0.
    pub fn post_jump(&self, x: &Point, i: usize, v: f64) -> HybridState {
        let q = self.jump.eval(x);
        let mut cum = 0.0;
        let mut last_positive = i;
        for j in 0..self.n_states {
            let w = q[(i, j)];
            if w > 0.0 {
                last_positive = j;
                cum += w;
                if v <= cum {
                    return HybridState::new(x.clone(), 0.0, j);
                }
            }
        }
        HybridState::new(x.clone(), 0.0, last_positive)
    }

    /// Density of the first-jump time from z, where the law has an
    /// absolutely continuous part: `λ^i(φ^i_t(x)) g^i(a(t)) / G^i(a(0))`.
    pub fn jump_density(&self, z: &HybridState, t: f64) -> Result<f64> {
        let law = &self.laws[z.i];
        if !law.has_density() {
            return Err(SimError::NoDensity);
        }
        let denom = law.survival(self.cumulative_rate(z, 0.0)?);
        if denom <= 0.0 {
            return Err(SimError::NotInK("density denominator vanishes".into()));
        }
        let g = law.ac_density(self.cumulative_rate(z, t)?).unwrap_or(0.0);
        let y = self.flow(z.i, t, &z.x)?;
        Ok(self.rates[z.i].eval(&y) * g / denom)
    }

    /// Dominating survival `H(t) = min_i G^i(λ_max t)`.
    pub fn dominating_survival(&self, t: f64) -> f64 {
        let lam = self.lambda_max();
        self.laws
            .iter()
            .map(|l| l.survival(lam * t))
            .fold(1.0, f64::min)
    }

    /// Inverse-transform draw from the law with survival `H`.
    pub fn sample_dominating_holding(&self, u: f64) -> f64 {
        let lam = self.lambda_max();
        self.laws
            .iter()
            .map(|l| l.inverse_survival(u) / lam)
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FlowRange;
    use approx::assert_relative_eq;

    pub(crate) fn two_state(
        laws: (HoldingLaw, HoldingLaw),
        rates: (RateFunction, RateFunction),
    ) -> SwitchedSystem {
        let f0 = VectorFieldSpec::new(0, 1, |x: &Point| -x.clone())
            .with_flow(|t, x: &Point| x * (-t).exp(), FlowRange::All)
            .with_jacobian(|_| Matrix::from_row_slice(1, 1, &[-1.0]));
        let f1 = VectorFieldSpec::new(1, 1, |x: &Point| Point::from_vec(vec![1.0 - x[0]]))
            .with_flow(
                |t, x: &Point| Point::from_vec(vec![1.0 + (x[0] - 1.0) * (-t).exp()]),
                FlowRange::All,
            )
            .with_jacobian(|_| Matrix::from_row_slice(1, 1, &[-1.0]));
        let q = JumpMatrix::constant(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .with_witness_cycle(vec![0, 1, 0]);
        SwitchedSystem::new(
            vec![f0, f1],
            vec![laws.0, laws.1],
            vec![rates.0, rates.1],
            q,
        )
        .unwrap()
    }

    fn z(x: f64, s: f64, i: usize) -> HybridState {
        HybridState::new(Point::from_vec(vec![x]), s, i)
    }

    #[test]
    fn cumulative_rate_examples() {
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(sys.cumulative_rate(&z(0.4, 0.5, 0), 2.0).unwrap(), 2.5);
        assert_relative_eq!(sys.cumulative_rate(&z(0.4, 0.5, 0), -0.5).unwrap(), 0.0);

        // λ(x) = x along φ_r(x0) = x0 e^r gives x0 (e^t − 1). The bare struct
        // is used because λ(x) = x only respects its rate floor for x > 0.
        let grow = VectorFieldSpec::new(0, 1, |x: &Point| x.clone())
            .with_flow(|t, x: &Point| x * t.exp(), FlowRange::All);
        let other = VectorFieldSpec::new(1, 1, |x: &Point| x.clone())
            .with_flow(|t, x: &Point| x * t.exp(), FlowRange::All);
        let sys = SwitchedSystem {
            fields: vec![grow, other],
            laws: vec![HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)],
            rates: vec![
                RateFunction::from_fn(|x: &Point| x[0], 1e-3, 1e6),
                RateFunction::constant(1.0),
            ],
            jump: JumpMatrix::constant(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            dim: 1,
            n_states: 2,
            compact: None,
            flow_config: FlowConfig::default(),
        };
        let v = sys.cumulative_rate(&z(1.0, 0.0, 0), 1.0).unwrap();
        assert_relative_eq!(v, 1f64.exp() - 1.0, epsilon = 1e-8);
    }

    #[test]
    fn survival_examples() {
        // Exponential is memoryless: survival independent of s.
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        for s in [0.0, 0.7, 3.0] {
            assert_relative_eq!(
                sys.survival(&z(0.5, s, 0), 1.3).unwrap(),
                (-1.3f64).exp(),
                epsilon = 1e-12
            );
        }

        let sys = two_state(
            (HoldingLaw::uniform(0.0, 2.0), HoldingLaw::uniform(0.0, 2.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(sys.survival(&z(0.5, 0.0, 0), 1.0).unwrap(), 0.5);
        assert_relative_eq!(
            sys.survival(&z(0.5, 0.5, 0), 0.5).unwrap(),
            1.0 / 1.5,
            epsilon = 1e-12
        );
        // Denominator zero outside K.
        assert!(matches!(
            sys.survival(&z(0.5, 2.0, 0), 0.1),
            Err(SimError::NotInK(_))
        ));
    }

    #[test]
    fn inverse_survival_examples() {
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(
            sys.inverse_survival(&z(0.5, 0.0, 0), (-2f64).exp()).unwrap(),
            2.0,
            epsilon = 1e-10
        );

        let sys = two_state(
            (HoldingLaw::uniform(0.0, 2.0), HoldingLaw::uniform(0.0, 2.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(
            sys.inverse_survival(&z(0.5, 0.0, 0), 0.25).unwrap(),
            1.5,
            epsilon = 1e-10
        );

        let mix = HoldingLaw::atom_mixture(vec![(1.0, 0.5), (2.0, 0.5)]);
        let sys = two_state(
            (mix.clone(), mix),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(sys.inverse_survival(&z(0.5, 0.0, 0), 0.6).unwrap(), 1.0);
        assert_relative_eq!(sys.inverse_survival(&z(0.5, 0.0, 0), 0.4).unwrap(), 2.0);
    }

    #[test]
    fn post_jump_partition() {
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        let x = Point::from_vec(vec![0.5]);
        for v in [1e-9, 0.5, 1.0] {
            assert_eq!(sys.post_jump(&x, 0, v).i, 1);
            assert_eq!(sys.post_jump(&x, 1, v).i, 0);
            assert_eq!(sys.post_jump(&x, 0, v).s, 0.0);
        }

        // Three states, row (0, 0.3, 0.7): half-open boundary convention.
        let q = Matrix::from_row_slice(
            3,
            3,
            &[0.0, 0.3, 0.7, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0],
        );
        let f = |id: usize| VectorFieldSpec::new(id, 1, |x: &Point| -x.clone());
        let sys3 = SwitchedSystem::new(
            vec![f(0), f(1), f(2)],
            vec![
                HoldingLaw::exponential(1.0),
                HoldingLaw::exponential(1.0),
                HoldingLaw::exponential(1.0),
            ],
            vec![
                RateFunction::constant(1.0),
                RateFunction::constant(1.0),
                RateFunction::constant(1.0),
            ],
            JumpMatrix::constant(q),
        )
        .unwrap();
        assert_eq!(sys3.post_jump(&x, 0, 0.3).i, 1);
        assert_eq!(sys3.post_jump(&x, 0, 0.31).i, 2);
        assert_eq!(sys3.post_jump(&x, 0, 1.0).i, 2);
    }

    #[test]
    fn jump_density_examples() {
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(
            sys.jump_density(&z(0.5, 0.0, 0), 1.0).unwrap(),
            (-1f64).exp(),
            epsilon = 1e-9
        );

        let sys = two_state(
            (HoldingLaw::uniform(0.0, 2.0), HoldingLaw::uniform(0.0, 2.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(sys.jump_density(&z(0.5, 0.0, 0), 1.3).unwrap(), 0.5);

        let sys = two_state(
            (HoldingLaw::dirac(1.0), HoldingLaw::dirac(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert!(matches!(
            sys.jump_density(&z(0.5, 0.0, 0), 0.5),
            Err(SimError::NoDensity)
        ));
    }

    #[test]
    fn dominating_survival_examples() {
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(2.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(sys.dominating_survival(1.0), (-2f64).exp());
        assert_eq!(sys.dominating_survival(0.0), 1.0);

        let sys = two_state(
            (HoldingLaw::uniform(0.0, 2.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        assert_relative_eq!(sys.dominating_survival(1.0), (-1f64).exp());
    }

    #[test]
    fn holding_sample_mean_and_positivity() {
        let sys = two_state(
            (HoldingLaw::exponential(1.0), HoldingLaw::exponential(1.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        let zz = z(0.5, 0.0, 0);
        let mut rng = crate::rng::replica_rng(42, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = sys.sample_holding(&zz, &mut rng).unwrap();
            assert!(s > 0.0);
            sum += s;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn conditional_law_identity_two_sample() {
        // S₁ from (x, s, i) is distributed as (S₁′ − s | S₁′ > s) from the
        // pulled-back start: two-sample KS on the uniform-law system.
        let sys = two_state(
            (HoldingLaw::uniform(0.0, 2.0), HoldingLaw::uniform(0.0, 2.0)),
            (RateFunction::constant(1.0), RateFunction::constant(1.0)),
        );
        let s = 0.5;
        let x = 0.7;
        let zs = z(x, s, 0);
        let x_back = sys.flow(0, -s, &Point::from_vec(vec![x])).unwrap();
        let z0 = HybridState::new(x_back, 0.0, 0);

        let mut rng = crate::rng::replica_rng(9, 0);
        let n = 30_000;
        let mut direct = Vec::with_capacity(n);
        for _ in 0..n {
            direct.push(sys.sample_holding(&zs, &mut rng).unwrap());
        }
        let mut conditioned = Vec::with_capacity(n);
        while conditioned.len() < n {
            let sp = sys.sample_holding(&z0, &mut rng).unwrap();
            if sp > s {
                conditioned.push(sp - s);
            }
        }
        let (_, p) = crate::stats::ks_two_sample(&direct, &conditioned);
        assert!(p > 0.001, "p = {p}");
    }
}
