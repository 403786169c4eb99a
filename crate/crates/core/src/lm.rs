//! Levenberg-Marquardt iteration with the regularization weight tied to the
//! data misfit and a closed-form surrogate update.
//!
//! Each step linearizes the forward map at `γ^k`, sets
//! `β_k = ‖u(γ^k) − z‖²` (the space-time norm for parabolic data) and replaces
//! the linearized subproblem by a majorizing surrogate whose minimizer is
//!
//! ```text
//!   γ^{k+1} = γ^k + u(γ^k) · u'(γ^k)*[(z − u(γ^k)) / u(γ^k)] / (A + β_k)
//! ```
//!
//! followed by a nodal projection onto `[γ_min, γ_max]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::elliptic::EllipticProblem;
use crate::error::{Error, Result};
use crate::fem::{boundary_inner, boundary_norm, conjugate_gradient, BoundaryField, SolverConfig, SparseMatrix};
use crate::mesh::{Mesh, SegmentTag};
use crate::parabolic::{time_integral_boundary, ParabolicProblem};

const GAMMA_I: SegmentTag = SegmentTag::Inaccessible;
const GAMMA_A: SegmentTag = SegmentTag::Accessible;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    /// Surrogate majorization constant `A`.
    pub a: f64,
    /// Relative-change stopping tolerance.
    pub eps: f64,
    pub max_iters: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Stop once the residual norm drops below this value.
    pub residual_floor: Option<f64>,
    /// Minimum `|u|` on the accessible boundary before the pointwise division.
    pub trace_guard: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            eps: 2e-3,
            max_iters: 100,
            gamma_min: 0.1,
            gamma_max: 10.0,
            residual_floor: None,
            trace_guard: 1e-8,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad(format!("A must be positive, got {}", self.a));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.gamma_min > 0.0 && self.gamma_max >= self.gamma_min && self.gamma_max.is_finite()) {
            return bad(format!(
                "need 0 < gamma_min <= gamma_max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            ));
        }
        if !(self.trace_guard >= 0.0) {
            return bad(format!("trace guard must be non-negative, got {}", self.trace_guard));
        }
        if let Some(floor) = self.residual_floor {
            if !(floor >= 0.0) {
                return bad(format!("residual floor must be non-negative, got {floor}"));
            }
        }
        Ok(())
    }
}

/// One row of the convergence history.
///
/// `residual` and `beta` belong to the iterate the step started from;
/// `rel_change` and `rel_error` to the iterate it produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub residual: f64,
    pub beta: f64,
    pub rel_change: f64,
    pub rel_error: Option<f64>,
    /// Nodes where the projection onto the bounds was active.
    pub clamped: usize,
}

/// Everything needed to rebuild the surrogate functional of the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub gamma_prev: BoundaryField,
    /// Unprojected step `Δγ`.
    pub step: BoundaryField,
    pub pre_clamp: BoundaryField,
    pub a: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub k: usize,
    pub gamma: BoundaryField,
    /// Residual norm at the iterate the last step started from (NaN before
    /// the first step).
    pub residual_norm: f64,
    pub beta: f64,
    pub history: Vec<HistoryRow>,
    pub last_update: Option<UpdateRecord>,
}

impl LmState {
    pub fn new(gamma0: BoundaryField) -> Self {
        Self {
            k: 0,
            gamma: gamma0,
            residual_norm: f64::NAN,
            beta: f64::NAN,
            history: Vec::new(),
            last_update: None,
        }
    }
}

/// Squared misfit and unscaled update direction at one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub squared_residual: f64,
    /// `u · w*` on the inaccessible boundary (time-integrated for parabolic
    /// problems).
    pub direction: BoundaryField,
}

/// A forward model the iteration can drive.
pub trait InverseModel {
    type Observation: ?Sized;

    fn mesh(&self) -> &Mesh;

    fn evaluate(&self, gamma: &BoundaryField, z: &Self::Observation, trace_guard: f64) -> Result<Evaluation>;
}

fn guarded_ratio(
    mesh: &Mesh,
    r: &BoundaryField,
    u: &BoundaryField,
    tau: f64,
    time_level: Option<usize>,
) -> Result<BoundaryField> {
    let seg = mesh.segment(GAMMA_A);
    if let Some((node, &value)) = u.values.iter().enumerate().find(|(_, v)| !(v.abs() >= tau)) {
        return Err(Error::TraceGuard {
            node,
            mesh_node: seg.nodes[node],
            value,
            tau,
            time_level,
        });
    }
    r.zip_with(u, |r, u| r / u)
}

impl InverseModel for EllipticProblem {
    type Observation = BoundaryField;

    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn evaluate(&self, gamma: &BoundaryField, z: &BoundaryField, tau: f64) -> Result<Evaluation> {
        let mesh = &*self.mesh;
        z.check_on(mesh, GAMMA_A)?;
        let op = self.operator(gamma)?;
        let u = op.forward()?;
        let ua = u.trace(mesh, GAMMA_A);
        let r = z.sub(&ua)?;
        let squared_residual = boundary_inner(mesh, GAMMA_A, &r, &r)?;
        let p = guarded_ratio(mesh, &r, &ua, tau, None)?;
        let w_adj = op.adjoint(&u, &p)?;
        let direction = u.trace(mesh, GAMMA_I).mul(&w_adj.trace(mesh, GAMMA_I))?;
        Ok(Evaluation {
            squared_residual,
            direction,
        })
    }
}

impl InverseModel for ParabolicProblem {
    /// One accessible-boundary field per time level `0..=nt`; level 0 is
    /// never used.
    type Observation = [BoundaryField];

    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn evaluate(&self, gamma: &BoundaryField, z: &[BoundaryField], tau: f64) -> Result<Evaluation> {
        let mesh = &*self.mesh;
        if z.len() != self.nt + 1 {
            return Err(Error::LengthMismatch {
                expected: self.nt + 1,
                got: z.len(),
            });
        }
        let dt = self.dt();
        let op = self.operator(gamma)?;
        let u = op.forward()?;
        let mut squared_residual = 0.0;
        let mut p = Vec::with_capacity(self.nt + 1);
        p.push(BoundaryField::zeros(mesh, GAMMA_A));
        for (n, (un, zn)) in u.levels.iter().zip(z).enumerate().skip(1) {
            zn.check_on(mesh, GAMMA_A)?;
            let ua = un.trace(mesh, GAMMA_A);
            let r = zn.sub(&ua)?;
            squared_residual += dt * boundary_inner(mesh, GAMMA_A, &r, &r)?;
            p.push(guarded_ratio(mesh, &r, &ua, tau, Some(n))?);
        }
        let w_adj = op.adjoint(&u, &p)?;
        let products = u
            .levels
            .iter()
            .zip(&w_adj.levels)
            .map(|(un, wn)| un.trace(mesh, GAMMA_I).mul(&wn.trace(mesh, GAMMA_I)))
            .collect::<Result<Vec<_>>>()?;
        let direction = time_integral_boundary(&products, self.nt, dt)?;
        Ok(Evaluation {
            squared_residual,
            direction,
        })
    }
}

/// `‖γ − γ*‖ / ‖γ*‖` on the inaccessible boundary.
pub fn relative_error(mesh: &Mesh, gamma: &BoundaryField, exact: &BoundaryField) -> Result<f64> {
    let denom = boundary_norm(mesh, GAMMA_I, exact)?;
    if denom == 0.0 {
        return Err(Error::InvalidConfig("reference coefficient has zero norm".into()));
    }
    Ok(boundary_norm(mesh, GAMMA_I, &gamma.sub(exact)?)? / denom)
}

/// One iteration: forward and adjoint solves, closed-form update, projection.
pub fn lm_step<M: InverseModel + ?Sized>(
    model: &M,
    state: &LmState,
    z: &M::Observation,
    cfg: &LmConfig,
    gamma_exact: Option<&BoundaryField>,
) -> Result<LmState> {
    let mesh = model.mesh();
    let eval = model.evaluate(&state.gamma, z, cfg.trace_guard)?;
    let residual = eval.squared_residual.sqrt();
    let beta = residual * residual;
    let step = eval.direction.scaled(1.0 / (cfg.a + beta));
    let pre_clamp = state.gamma.add(&step)?;
    let gamma = pre_clamp.clamp(cfg.gamma_min, cfg.gamma_max);
    let clamped = pre_clamp
        .values
        .iter()
        .zip(&gamma.values)
        .filter(|(a, b)| a != b)
        .count();
    let rel_change = boundary_norm(mesh, GAMMA_I, &gamma.sub(&state.gamma)?)?
        / boundary_norm(mesh, GAMMA_I, &state.gamma)?;
    let rel_error = gamma_exact
        .map(|exact| relative_error(mesh, &gamma, exact))
        .transpose()?;

    let mut history = state.history.clone();
    history.push(HistoryRow {
        iter: state.k + 1,
        residual,
        beta,
        rel_change,
        rel_error,
        clamped,
    });
    Ok(LmState {
        k: state.k + 1,
        gamma,
        residual_norm: residual,
        beta,
        history,
        last_update: Some(UpdateRecord {
            gamma_prev: state.gamma.clone(),
            step,
            pre_clamp,
            a: cfg.a,
            beta,
        }),
    })
}

pub fn lm_step_elliptic(
    prob: &EllipticProblem,
    state: &LmState,
    z: &BoundaryField,
    cfg: &LmConfig,
    gamma_exact: Option<&BoundaryField>,
) -> Result<LmState> {
    lm_step(prob, state, z, cfg, gamma_exact)
}

pub fn lm_step_parabolic(
    prob: &ParabolicProblem,
    state: &LmState,
    z: &[BoundaryField],
    cfg: &LmConfig,
    gamma_exact: Option<&BoundaryField>,
) -> Result<LmState> {
    lm_step(prob, state, z, cfg, gamma_exact)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RelativeChange,
    ResidualFloor,
    MaxIters,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::RelativeChange => "relative_change",
            StopReason::ResidualFloor => "residual_floor",
            StopReason::MaxIters => "max_iters",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub state: LmState,
    pub stop: StopReason,
}

/// A failed step, with the history accumulated before it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("iteration {iteration}: {source}")]
pub struct RunError {
    pub iteration: usize,
    #[source]
    pub source: Error,
    pub state: Box<LmState>,
}

/// Iterates until the relative change drops to `eps`, the residual drops
/// below the configured floor, or `max_iters` steps have run.
pub fn run<M: InverseModel + ?Sized>(
    model: &M,
    gamma0: BoundaryField,
    z: &M::Observation,
    cfg: &LmConfig,
    gamma_exact: Option<&BoundaryField>,
) -> std::result::Result<RunOutcome, RunError> {
    let mut state = LmState::new(gamma0);
    let fail = |state: &LmState, source| RunError {
        iteration: state.k + 1,
        source,
        state: Box::new(state.clone()),
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(&state, e));
    }
    loop {
        let next = match lm_step(model, &state, z, cfg, gamma_exact) {
            Ok(next) => next,
            Err(e) => return Err(fail(&state, e)),
        };
        if let Some(floor) = cfg.residual_floor {
            if next.residual_norm < floor {
                state.residual_norm = next.residual_norm;
                state.beta = next.beta;
                return Ok(RunOutcome {
                    state,
                    stop: StopReason::ResidualFloor,
                });
            }
        }
        let change = next.history.last().map_or(f64::INFINITY, |row| row.rel_change);
        state = next;
        if change <= cfg.eps {
            return Ok(RunOutcome {
                state,
                stop: StopReason::RelativeChange,
            });
        }
        if state.k >= cfg.max_iters {
            return Ok(RunOutcome {
                state,
                stop: StopReason::MaxIters,
            });
        }
    }
}

/// The surrogate functional of one step, without its γ-independent part:
///
/// ```text
///   J_s(γ) = A ‖γ − γ^k − Δγ (A + β)/A‖² + β ‖γ − γ^k‖²
/// ```
///
/// whose unconstrained minimizer is `γ^k + Δγ`.
#[derive(Debug, Clone)]
pub struct SurrogateObjective<'m> {
    mesh: &'m Mesh,
    gamma_k: BoundaryField,
    target: BoundaryField,
    a: f64,
    beta: f64,
}

impl<'m> SurrogateObjective<'m> {
    pub fn eval(&self, gamma: &BoundaryField) -> Result<f64> {
        let to_target = gamma.sub(&self.target)?;
        let to_prev = gamma.sub(&self.gamma_k)?;
        Ok(self.a * boundary_inner(self.mesh, GAMMA_I, &to_target, &to_target)?
            + self.beta * boundary_inner(self.mesh, GAMMA_I, &to_prev, &to_prev)?)
    }
}

pub fn make_surrogate_objective<'m>(
    mesh: &'m Mesh,
    gamma_k: &BoundaryField,
    step: &BoundaryField,
    beta: f64,
    a: f64,
) -> Result<SurrogateObjective<'m>> {
    let scale = (a + beta) / a;
    let target = gamma_k.add(&step.scaled(scale))?;
    Ok(SurrogateObjective {
        mesh,
        gamma_k: gamma_k.clone(),
        target,
        a,
        beta,
    })
}

impl UpdateRecord {
    pub fn surrogate<'m>(&self, mesh: &'m Mesh) -> Result<SurrogateObjective<'m>> {
        make_surrogate_objective(mesh, &self.gamma_prev, &self.step, self.beta, self.a)
    }
}

/// Consistent mass matrix of a segment in its local numbering.
pub(crate) fn segment_mass(mesh: &Mesh, tag: SegmentTag) -> SparseMatrix {
    let seg = mesh.segment(tag);
    let mut t = Vec::new();
    for (&[a, b], &len) in seg.edges.iter().zip(&seg.lengths) {
        t.push((a, a, len / 3.0));
        t.push((b, b, len / 3.0));
        t.push((a, b, len / 6.0));
        t.push((b, a, len / 6.0));
    }
    SparseMatrix::from_triplets(seg.len(), &t)
}

/// Power-iteration estimate of `sup ‖u'(γ) d‖²_{Γ_a} / ‖d‖²_{Γ_i}`, the
/// smallest admissible surrogate constant `A` at `γ`.
pub fn estimate_surrogate_constant(prob: &EllipticProblem, gamma: &BoundaryField, iters: usize) -> Result<f64> {
    let mesh = &*prob.mesh;
    let op = prob.operator(gamma)?;
    let u = op.forward()?;
    let ui = u.trace(mesh, GAMMA_I);
    let ua = u.trace(mesh, GAMMA_A);
    let mass_i = segment_mass(mesh, GAMMA_I);
    let solver = SolverConfig::with_tol(1e-13);
    let mut d = BoundaryField::constant(mesh, GAMMA_I, 1.0);
    let mut rayleigh = 0.0;
    for _ in 0..iters.max(1) {
        let norm = boundary_norm(mesh, GAMMA_I, &d)?;
        if norm == 0.0 {
            return Ok(0.0);
        }
        d = d.scaled(1.0 / norm);
        let gd = op.derivative(&u, &d)?.trace(mesh, GAMMA_A);
        rayleigh = boundary_inner(mesh, GAMMA_A, &gd, &gd)?;
        // Gᵀ B_a (G d) = diag(u) B_i w*, with w* the adjoint for p = G d / u
        let p = gd.zip_with(&ua, |g, u| g / u)?;
        let w_adj = op.adjoint(&u, &p)?.trace(mesh, GAMMA_I);
        let rhs = mass_i.mul_vec(&w_adj.values);
        let rhs: Vec<f64> = rhs.iter().zip(&ui.values).map(|(r, u)| r * u).collect();
        let mut next = vec![0.0; rhs.len()];
        conjugate_gradient(&mass_i, &rhs, &mut next, &solver)?;
        d = BoundaryField::new(GAMMA_I, next);
    }
    Ok(rayleigh)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fem::{Coefficient, NodalField};
    use crate::mesh::build_rect_mesh;

    fn gamma_51(y: f64) -> f64 {
        3.0 - (PI * y / 2.0).sin()
    }

    fn problem(nx: usize, ny: usize) -> EllipticProblem {
        let mesh = Arc::new(build_rect_mesh(nx, ny, 1.0, 2.0).unwrap());
        EllipticProblem::new(
            mesh,
            Coefficient::Constant(1.0),
            Coefficient::Constant(1.0),
            Arc::new(|x, y| (PI * PI + 1.0) * (PI * y).cos() + x * x - 2.0),
            Arc::new(|_, y| 2.0 + ((PI * y).cos() + 1.0) * gamma_51(y)),
            Arc::new(|_, _| 0.0),
        )
        .unwrap()
    }

    fn exact_data(prob: &EllipticProblem) -> BoundaryField {
        BoundaryField::interpolate(&prob.mesh, GAMMA_A, |x, y| x * x + (PI * y).cos())
    }

    #[test]
    fn config_validation() {
        assert!(LmConfig::default().validate().is_ok());
        for bad in [
            LmConfig { a: 0.0, ..LmConfig::default() },
            LmConfig { eps: 0.0, ..LmConfig::default() },
            LmConfig { max_iters: 0, ..LmConfig::default() },
            LmConfig { gamma_min: 0.0, ..LmConfig::default() },
            LmConfig { gamma_min: 2.0, gamma_max: 1.0, ..LmConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn exact_start_is_a_fixed_point() {
        let prob = problem(16, 32);
        let gamma = BoundaryField::interpolate(&prob.mesh, GAMMA_I, |_, y| gamma_51(y));
        let z = exact_data(&prob);
        let out = run(&prob, gamma.clone(), &z, &LmConfig::default(), Some(&gamma)).unwrap();
        assert_eq!(out.stop, StopReason::RelativeChange);
        assert_eq!(out.state.history.len(), 1);
    }

    #[test]
    fn huge_eps_stops_after_one_step_and_cap_is_respected() {
        let prob = problem(8, 16);
        let z = exact_data(&prob);
        let gamma0 = BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0);
        let cfg = LmConfig { eps: 1e30, ..LmConfig::default() };
        let out = run(&prob, gamma0.clone(), &z, &cfg, None).unwrap();
        assert_eq!((out.stop, out.state.history.len()), (StopReason::RelativeChange, 1));

        let cfg = LmConfig { eps: 1e-12, max_iters: 5, ..LmConfig::default() };
        let out = run(&prob, gamma0, &z, &cfg, None).unwrap();
        assert_eq!((out.stop, out.state.history.len()), (StopReason::MaxIters, 5));
    }

    #[test]
    fn residual_floor_stops_without_update() {
        let prob = problem(8, 16);
        let z = exact_data(&prob);
        let gamma0 = BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0);
        let cfg = LmConfig { residual_floor: Some(1e6), ..LmConfig::default() };
        let out = run(&prob, gamma0.clone(), &z, &cfg, None).unwrap();
        assert_eq!(out.stop, StopReason::ResidualFloor);
        assert!(out.state.history.is_empty());
        assert_eq!(out.state.gamma, gamma0);
        assert_eq!(out.state.beta, out.state.residual_norm * out.state.residual_norm);
    }

    #[test]
    fn beta_is_squared_residual_and_iterates_stay_in_bounds() {
        let prob = problem(8, 16);
        let z = exact_data(&prob);
        let gamma0 = BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0);
        let cfg = LmConfig { eps: 1e-12, max_iters: 8, gamma_min: 2.0, gamma_max: 2.6, ..LmConfig::default() };
        let prob = prob.with_bounds(2.0, 2.6).unwrap();
        let out = run(&prob, gamma0, &z, &cfg, None).unwrap();
        for row in &out.state.history {
            assert_eq!(row.beta, row.residual * row.residual);
        }
        assert!(out.state.gamma.values.iter().all(|&g| (2.0..=2.6).contains(&g)));
        assert!(out.state.history.iter().any(|r| r.clamped > 0));
    }

    #[test]
    fn trace_guard_trips_on_vanishing_trace() {
        let mesh = Arc::new(build_rect_mesh(4, 8, 1.0, 2.0).unwrap());
        let zero: crate::fem::SpaceFn = Arc::new(|_, _| 0.0);
        let prob = EllipticProblem::new(
            mesh.clone(),
            Coefficient::Constant(1.0),
            Coefficient::Constant(1.0),
            zero.clone(),
            zero.clone(),
            zero,
        )
        .unwrap();
        let z = BoundaryField::constant(&mesh, GAMMA_A, 1.0);
        let gamma0 = BoundaryField::constant(&mesh, GAMMA_I, 2.0);
        let err = run(&prob, gamma0, &z, &LmConfig::default(), None).unwrap_err();
        assert_eq!(err.iteration, 1);
        assert!(matches!(err.source, Error::TraceGuard { node: 0, .. }));
        assert!(err.state.history.is_empty());
    }

    #[test]
    fn doubling_the_denominator_halves_the_step() {
        let prob = problem(4, 8);
        let z = exact_data(&prob).map(|v| 1.01 * v);
        let state = LmState::new(BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0));
        let s1 = lm_step(&prob, &state, &z, &LmConfig::default(), None).unwrap();
        let beta = s1.beta;
        let cfg2 = LmConfig { a: 2.0 + beta, ..LmConfig::default() };
        let s2 = lm_step(&prob, &state, &z, &cfg2, None).unwrap();
        let (d1, d2) = (&s1.last_update.unwrap().step, &s2.last_update.unwrap().step);
        for (a, b) in d1.values.iter().zip(&d2.values) {
            assert!((0.5 * a - b).abs() <= 1e-14 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn surrogate_minimizer_beats_random_probes() {
        let prob = problem(8, 16);
        let mesh = prob.mesh.clone();
        let z = exact_data(&prob).map(|v| 1.02 * v);
        let state = LmState::new(BoundaryField::constant(&mesh, GAMMA_I, 2.0));
        let next = lm_step(&prob, &state, &z, &LmConfig::default(), None).unwrap();
        let rec = next.last_update.unwrap();
        let js = rec.surrogate(&mesh).unwrap();
        let at_min = js.eval(&rec.pre_clamp).unwrap();
        assert!(at_min <= js.eval(&rec.gamma_prev).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let noise: Vec<f64> = (0..rec.pre_clamp.len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let probe = rec.pre_clamp.add(&BoundaryField::new(GAMMA_I, noise)).unwrap();
            assert!(at_min <= js.eval(&probe).unwrap() * (1.0 + 1e-12));
        }
        // central differences of the quadratic vanish at the minimizer
        let h = 1e-4;
        for k in 0..rec.pre_clamp.len() {
            let mut plus = rec.pre_clamp.clone();
            let mut minus = rec.pre_clamp.clone();
            plus.values[k] += h;
            minus.values[k] -= h;
            let grad = (js.eval(&plus).unwrap() - js.eval(&minus).unwrap()) / (2.0 * h);
            assert!(grad.abs() < 1e-6, "gradient {grad} at node {k}");
        }
    }

    #[test]
    fn surrogate_constant_estimate_is_a_rayleigh_bound() {
        let prob = problem(4, 8).with_solver(SolverConfig::with_tol(1e-13));
        let mesh = prob.mesh.clone();
        let gamma = BoundaryField::constant(&mesh, GAMMA_I, 2.0);
        let a_est = estimate_surrogate_constant(&prob, &gamma, 50).unwrap();
        assert!(a_est > 0.0);
        let op = prob.operator(&gamma).unwrap();
        let u: NodalField = op.forward().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = BoundaryField::new(GAMMA_I, (0..mesh.segment(GAMMA_I).len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let gd = op.derivative(&u, &d).unwrap().trace(&mesh, GAMMA_A);
            let ratio = boundary_inner(&mesh, GAMMA_A, &gd, &gd).unwrap() / boundary_inner(&mesh, GAMMA_I, &d, &d).unwrap();
            assert!(ratio <= a_est * (1.0 + 1e-6), "ratio {ratio} > estimate {a_est}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn surrogate_value_is_minimal_at_closed_form_update(
            step in prop::collection::vec(-1.0f64..1.0, 9),
            probe in prop::collection::vec(-1.0f64..1.0, 9),
            beta in 0.0f64..5.0,
            a in 0.1f64..5.0,
        ) {
            let mesh = build_rect_mesh(2, 8, 1.0, 2.0).unwrap();
            let gamma_k = BoundaryField::constant(&mesh, GAMMA_I, 2.0);
            let step = BoundaryField::new(GAMMA_I, step);
            let js = make_surrogate_objective(&mesh, &gamma_k, &step, beta, a).unwrap();
            let minimizer = gamma_k.add(&step).unwrap();
            let other = minimizer.add(&BoundaryField::new(GAMMA_I, probe)).unwrap();
            let jm = js.eval(&minimizer).unwrap();
            prop_assert!(jm <= js.eval(&other).unwrap() * (1.0 + 1e-12) + 1e-15);
        }
    }
}
