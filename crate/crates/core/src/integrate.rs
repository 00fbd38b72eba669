//! Explicit ODE integration: embedded Dormand–Prince 5(4) pair with standard
//! step control, plus a fixed-step classic RK4 for cheap reference runs.

use nalgebra::DVector;

use crate::error::{Result, SimError};

pub type Point = DVector<f64>;

/// Integrator selection and tolerances used by all flow evaluations.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub kind: IntegratorKind,
    /// Hard cap on the step size; `None` defaults to horizon/100.
    pub max_step: Option<f64>,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorKind {
    Adaptive,
    FixedRk4,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            kind: IntegratorKind::Adaptive,
            max_step: None,
            abs_tol: 1e-9,
            rel_tol: 1e-9,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(SimError::InvalidSpec(
                "abs_tol and rel_tol must be positive".into(),
            ));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(SimError::InvalidSpec("max_step must be positive".into()));
            }
        }
        Ok(())
    }

    fn step_cap(&self, horizon: f64) -> f64 {
        self.max_step.unwrap_or(horizon.abs() / 100.0).max(1e-14)
    }
}

// Dormand–Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper<'a, F: Fn(&Point) -> Point> {
    f: &'a F,
    cfg: &'a FlowConfig,
    h_cap: f64,
}

impl<'a, F: Fn(&Point) -> Point> Stepper<'a, F> {
    /// One accepted Dormand–Prince step from `x`; returns (new point, taken h, suggested h).
    fn step(&self, x: &Point, h_init: f64, h_left: f64) -> Result<(Point, f64, f64)> {
        let mut h = h_init.min(h_left).min(self.h_cap);
        let mut rejects = 0usize;
        loop {
            if !h.is_finite() || h < 1e-15 {
                return Err(SimError::IntegrationDiverged(format!(
                    "step size collapsed to {h}"
                )));
            }
            let mut k: Vec<Point> = Vec::with_capacity(7);
            k.push((self.f)(x));
            for i in 1..7 {
                let mut xi = x.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = A[i][j];
                    if a != 0.0 {
                        xi.axpy(a * h, kj, 1.0);
                    }
                }
                let _ = C[i];
                k.push((self.f)(&xi));
            }
            let mut x5 = x.clone();
            let mut x4 = x.clone();
            for (j, kj) in k.iter().enumerate() {
                if B5[j] != 0.0 {
                    x5.axpy(B5[j] * h, kj, 1.0);
                }
                if B4[j] != 0.0 {
                    x4.axpy(B4[j] * h, kj, 1.0);
                }
            }
            let mut err_norm: f64 = 0.0;
            for i in 0..x.len() {
                let sc = self.cfg.abs_tol + self.cfg.rel_tol * x[i].abs().max(x5[i].abs());
                err_norm = err_norm.max(((x5[i] - x4[i]) / sc).abs());
            }
            if !err_norm.is_finite() {
                return Err(SimError::IntegrationDiverged(
                    "non-finite state encountered".into(),
                ));
            }
            let scale = (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0);
            if err_norm <= 1.0 {
                let h_next = (h * scale).min(self.h_cap);
                return Ok((x5, h, h_next));
            }
            h *= scale;
            rejects += 1;
            if rejects > 200 {
                return Err(SimError::IntegrationDiverged(
                    "too many rejected steps".into(),
                ));
            }
        }
    }
}

/// Integrate `x' = f(x)` from `x0` over a signed duration `t`.
pub fn integrate<F: Fn(&Point) -> Point>(f: &F, x0: &Point, t: f64, cfg: &FlowConfig) -> Result<Point> {
    if t == 0.0 {
        return Ok(x0.clone());
    }
    if t < 0.0 {
        return integrate_forward(&|x: &Point| -f(x), x0, -t, cfg);
    }
    integrate_forward(f, x0, t, cfg)
}

fn integrate_forward<F: Fn(&Point) -> Point>(
    f: &F,
    x0: &Point,
    t: f64,
    cfg: &FlowConfig,
) -> Result<Point> {
    match cfg.kind {
        IntegratorKind::FixedRk4 => Ok(rk4_fixed(f, x0, t, cfg.step_cap(t))),
        IntegratorKind::Adaptive => {
            let stepper = Stepper {
                f,
                cfg,
                h_cap: cfg.step_cap(t),
            };
            let mut x = x0.clone();
            let mut done = 0.0;
            let mut h = (t / 16.0).min(stepper.h_cap);
            let mut steps = 0usize;
            // Stop once the leftover is below resolution; it cannot be stepped.
            while t - done > 1e-14 * t.max(1.0) {
                let (xn, taken, next) = stepper.step(&x, h, t - done)?;
                x = xn;
                done += taken;
                h = next;
                steps += 1;
                if steps > 50_000_000 {
                    return Err(SimError::IntegrationDiverged("step budget exhausted".into()));
                }
            }
            Ok(x)
        }
    }
}

fn rk4_fixed<F: Fn(&Point) -> Point>(f: &F, x0: &Point, t: f64, h_cap: f64) -> Point {
    let n = (t / h_cap).ceil().max(1.0) as usize;
    let h = t / n as f64;
    let mut x = x0.clone();
    for _ in 0..n {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Integrate `x' = f(x)` jointly with `A' = rate(x)`, `A(0) = a0`, until the
/// running integral reaches `target`. Returns the hit time and the state there.
///
/// `rate` must stay positive along the trajectory for the hit to be located.
pub fn integrate_until_rate<F, G>(
    f: &F,
    rate: &G,
    x0: &Point,
    a0: f64,
    target: f64,
    cfg: &FlowConfig,
    t_cap: f64,
) -> Result<(f64, Point)>
where
    F: Fn(&Point) -> Point,
    G: Fn(&Point) -> f64,
{
    if target <= a0 {
        return Ok((0.0, x0.clone()));
    }
    let d = x0.len();
    let aug = |y: &Point| -> Point {
        let x = y.rows(0, d).into_owned();
        let mut dy = Point::zeros(d + 1);
        dy.rows_mut(0, d).copy_from(&f(&x));
        dy[d] = rate(&x);
        dy
    };
    let mut y = Point::zeros(d + 1);
    y.rows_mut(0, d).copy_from(x0);
    y[d] = a0;

    let stepper = Stepper {
        f: &aug,
        cfg,
        h_cap: cfg.step_cap(t_cap),
    };
    let mut t = 0.0;
    let mut h = (t_cap / 100.0).min(stepper.h_cap);
    let mut steps = 0usize;
    while t_cap - t > 1e-14 * t_cap.max(1.0) {
        let (yn, taken, next) = stepper.step(&y, h, t_cap - t)?;
        if yn[d] >= target {
            // Refine the crossing inside [t, t + taken] with Newton on the
            // monotone running integral, re-integrating the sub-step each time.
            let mut tau = taken * (target - y[d]) / (yn[d] - y[d]);
            let mut yh = yn.clone();
            for _ in 0..6 {
                tau = tau.clamp(0.0, taken);
                yh = integrate(&aug, &y, tau, cfg)?;
                let err = yh[d] - target;
                if err.abs() < 1e-13 * (1.0 + target.abs()) {
                    break;
                }
                let x = yh.rows(0, d).into_owned();
                let lam = rate(&x);
                tau -= err / lam.max(1e-300);
            }
            return Ok((t + tau, yh.rows(0, d).into_owned()));
        }
        y = yn;
        t += taken;
        h = next;
        steps += 1;
        if steps > 50_000_000 {
            return Err(SimError::IntegrationDiverged("step budget exhausted".into()));
        }
    }
    Err(SimError::IntegrationDiverged(format!(
        "rate integral did not reach {target} before t = {t_cap}"
    )))
}
