//! Holding-time laws.
//!
//! A law is described through its survival function `G(t) = μ(t, ∞)`,
//! right-continuous and nonincreasing with `G(0) = 1` and `μ({0}) = 0`.
//! Each kind carries its support structure (closed intervals and atoms), the
//! terminal time `t̄ = inf{t : G(t) = 0}`, the density of the absolutely
//! continuous part when there is one, and an optional declared exponential
//! decay envelope `G(t) ≤ C e^{−βt}`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Closed-interval/atom description of a topological support on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    /// Disjoint closed intervals `[lo, hi]`; `hi` may be infinite.
    pub intervals: Vec<(f64, f64)>,
    /// Isolated atoms.
    pub atoms: Vec<f64>,
}

impl SupportSet {
    pub fn sup(&self) -> f64 {
        let mut s = f64::NEG_INFINITY;
        for &(_, hi) in &self.intervals {
            s = s.max(hi);
        }
        for &a in &self.atoms {
            s = s.max(a);
        }
        s
    }

    /// Membership of `t`, inflated by the absolute tolerance `eta`.
    pub fn contains(&self, t: f64, eta: f64) -> bool {
        self.intervals
            .iter()
            .any(|&(lo, hi)| t >= lo - eta && t <= hi + eta)
            || self.atoms.iter().any(|&a| (t - a).abs() <= eta)
    }

    /// Whether `(t, ∞)` meets the support, requiring a margin of `eta`.
    pub fn tail_nonempty(&self, t: f64, eta: f64) -> bool {
        self.sup() > t + eta
    }

    pub fn contains_zero(&self, eta: f64) -> bool {
        self.contains(0.0, eta)
    }

    /// A small positive support point `s ≤ cap` with more support beyond it,
    /// used when planning control sequences with short legs.
    pub fn small_point_with_tail(&self, cap: f64, eta: f64) -> Option<f64> {
        let sup = self.sup();
        let mut candidates: Vec<f64> = Vec::new();
        for &(lo, hi) in &self.intervals {
            if lo > cap || hi <= 0.0 {
                continue;
            }
            let c = if lo > 0.0 { lo } else { 0.5 * hi.min(cap) };
            if c > 0.0 && c <= cap {
                candidates.push(c);
            }
        }
        for &a in &self.atoms {
            if a > 0.0 && a <= cap {
                candidates.push(a);
            }
        }
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.into_iter().find(|&c| sup > c + eta)
    }
}

/// Law kinds exposed to configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawKind {
    Exponential { rate: f64 },
    Uniform { a: f64, b: f64 },
    Dirac { t: f64 },
    AtomMixture { atoms: Vec<(f64, f64)> },
    Table { times: Vec<f64>, survival: Vec<f64> },
}

/// A holding-time law μ with survival function, support, and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingLaw {
    kind: LawKind,
    support: SupportSet,
    tbar: f64,
    exp_decay: Option<(f64, f64)>,
}

impl HoldingLaw {
    pub fn exponential(rate: f64) -> Self {
        let kind = LawKind::Exponential { rate };
        HoldingLaw {
            support: SupportSet {
                intervals: vec![(0.0, f64::INFINITY)],
                atoms: vec![],
            },
            tbar: f64::INFINITY,
            exp_decay: Some((1.0, rate)),
            kind,
        }
    }

    pub fn uniform(a: f64, b: f64) -> Self {
        HoldingLaw {
            support: SupportSet {
                intervals: vec![(a, b)],
                atoms: vec![],
            },
            tbar: b,
            // Compact support: G vanishes past b, so G(t) ≤ e^{b} e^{−t} holds.
            exp_decay: Some((b.exp(), 1.0)),
            kind: LawKind::Uniform { a, b },
        }
    }

    pub fn shifted_uniform(shift: f64, width: f64) -> Self {
        Self::uniform(shift, shift + width)
    }

    pub fn dirac(t: f64) -> Self {
        HoldingLaw {
            support: SupportSet {
                intervals: vec![],
                atoms: vec![t],
            },
            tbar: t,
            exp_decay: Some((t.exp(), 1.0)),
            kind: LawKind::Dirac { t },
        }
    }

    /// Atomic mixture Σ w_k δ_{t_k}; weights are renormalized to sum to one.
    pub fn atom_mixture(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
        for a in atoms.iter_mut() {
            a.1 /= total;
        }
        let tbar = atoms.last().map(|&(t, _)| t).unwrap_or(0.0);
        HoldingLaw {
            support: SupportSet {
                intervals: vec![],
                atoms: atoms.iter().map(|&(t, _)| t).collect(),
            },
            tbar,
            exp_decay: Some((tbar.exp(), 1.0)),
            kind: LawKind::AtomMixture { atoms },
        }
    }

    /// Step survival function: `G(t) = survival[k]` on `[times[k], times[k+1])`,
    /// 1 before `times[0]`. The last entry must be 0.
    pub fn table(times: Vec<f64>, survival: Vec<f64>) -> Self {
        let mut atoms = Vec::new();
        let mut prev = 1.0;
        for (k, &t) in times.iter().enumerate() {
            let drop = prev - survival[k];
            if drop > 0.0 {
                atoms.push((t, drop));
            }
            prev = survival[k];
        }
        let tbar = times
            .iter()
            .zip(&survival)
            .find(|&(_, &g)| g == 0.0)
            .map(|(&t, _)| t)
            .unwrap_or(f64::INFINITY);
        HoldingLaw {
            support: SupportSet {
                intervals: vec![],
                atoms: atoms.iter().map(|&(t, _)| t).collect(),
            },
            tbar,
            exp_decay: None,
            kind: LawKind::Table { times, survival },
        }
    }

    /// Declare an exponential envelope `G(t) ≤ C e^{−βt}`.
    pub fn with_exp_decay(mut self, c: f64, beta: f64) -> Self {
        self.exp_decay = Some((c, beta));
        self
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn tbar(&self) -> f64 {
        self.tbar
    }

    pub fn exp_decay(&self) -> Option<(f64, f64)> {
        self.exp_decay
    }

    /// Survival function `G(t) = μ(t, ∞)`.
    pub fn survival(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        match &self.kind {
            LawKind::Exponential { rate } => (-rate * t).exp(),
            LawKind::Uniform { a, b } => {
                if t < *a {
                    1.0
                } else if t >= *b {
                    0.0
                } else {
                    (b - t) / (b - a)
                }
            }
            LawKind::Dirac { t: t0 } => {
                if t < *t0 {
                    1.0
                } else {
                    0.0
                }
            }
            LawKind::AtomMixture { atoms } => {
                atoms.iter().filter(|&&(tk, _)| tk > t).map(|&(_, w)| w).sum()
            }
            LawKind::Table { times, survival } => {
                let mut g = 1.0;
                for (k, &tk) in times.iter().enumerate() {
                    if t >= tk {
                        g = survival[k];
                    } else {
                        break;
                    }
                }
                g
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    /// Generalized inverse `ψ(u) = inf{w ≥ 0 : G(w) ≤ u}` for `u ∈ (0, 1]`,
    /// returning the left edge of any plateau.
    pub fn inverse_survival(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return 0.0;
        }
        match &self.kind {
            LawKind::Exponential { rate } => -u.ln() / rate,
            LawKind::Uniform { a, b } => (b - u * (b - a)).max(*a),
            LawKind::Dirac { t } => *t,
            LawKind::AtomMixture { atoms } => {
                let mut tail: f64 = 1.0;
                for &(tk, w) in atoms {
                    tail -= w;
                    if tail <= u {
                        return tk;
                    }
                }
                atoms.last().map(|&(t, _)| t).unwrap_or(0.0)
            }
            LawKind::Table { times, survival } => {
                for (k, &tk) in times.iter().enumerate() {
                    if survival[k] <= u {
                        return tk;
                    }
                }
                *times.last().unwrap()
            }
        }
    }

    /// Atoms of μ as `(location, mass)` pairs.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            LawKind::Exponential { .. } | LawKind::Uniform { .. } => vec![],
            LawKind::Dirac { t } => vec![(*t, 1.0)],
            LawKind::AtomMixture { atoms } => atoms.clone(),
            LawKind::Table { times, survival } => {
                let mut out = Vec::new();
                let mut prev = 1.0;
                for (k, &t) in times.iter().enumerate() {
                    let drop = prev - survival[k];
                    if drop > 0.0 {
                        out.push((t, drop));
                    }
                    prev = survival[k];
                }
                out
            }
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.atoms().is_empty()
    }

    /// Density of the absolutely continuous part, if the law has one.
    pub fn ac_density(&self, t: f64) -> Option<f64> {
        match &self.kind {
            LawKind::Exponential { rate } => Some(if t >= 0.0 { rate * (-rate * t).exp() } else { 0.0 }),
            LawKind::Uniform { a, b } => Some(if t > *a && t < *b { 1.0 / (b - a) } else { 0.0 }),
            _ => None,
        }
    }

    pub fn has_density(&self) -> bool {
        matches!(
            self.kind,
            LawKind::Exponential { .. } | LawKind::Uniform { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        match &self.kind {
            LawKind::Exponential { rate } => {
                if !(*rate > 0.0) {
                    return bad(format!("exponential rate must be positive, got {rate}"));
                }
            }
            LawKind::Uniform { a, b } => {
                if !(*b > *a) || *a < 0.0 {
                    return bad(format!("uniform law needs 0 ≤ a < b, got [{a}, {b}]"));
                }
            }
            LawKind::Dirac { t } => {
                if !(*t > 0.0) {
                    return bad(format!("dirac location must be positive, got {t}"));
                }
            }
            LawKind::AtomMixture { atoms } => {
                if atoms.is_empty() {
                    return bad("atom mixture needs at least one atom".into());
                }
                if atoms.iter().any(|&(t, w)| !(t > 0.0) || !(w > 0.0)) {
                    return bad("atom mixture needs positive locations and weights".into());
                }
                let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("atom weights must sum to 1, got {total}"));
                }
            }
            LawKind::Table { times, survival } => {
                if times.len() != survival.len() || times.is_empty() {
                    return bad("table needs equal, nonempty times/survival lists".into());
                }
                if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("table times must be strictly increasing and positive".into());
                }
                if survival.windows(2).any(|w| w[1] > w[0]) || survival.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                    return bad("table survival must be nonincreasing within [0, 1]".into());
                }
                if *survival.last().unwrap() != 0.0 {
                    return bad("table survival must end at 0".into());
                }
            }
        }
        if self.survival(0.0) != 1.0 {
            return bad("law must satisfy G(0) = 1".into());
        }
        if let Some((c, beta)) = self.exp_decay {
            let hi = if self.tbar.is_finite() { self.tbar } else { 40.0 / beta };
            for k in 0..=200 {
                let t = hi * k as f64 / 200.0;
                if self.survival(t) > c * (-beta * t).exp() + 1e-12 {
                    return Err(SimError::NoExpDecay(format!(
                        "declared envelope violated at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}
