//! Manufactured test problems, noisy observations, error metrics and a dense
//! Gauss-Newton oracle for small meshes.
//!
//! All four registered examples live on `[0, 1] × [0, 2]` with the
//! inaccessible boundary at `x = 1`, `a = c = 1` and no flux on the
//! accessible part. The elliptic pair uses `u = x² + cos πy`, the parabolic
//! pair `u = (x² + cos πy) t` with zero initial state.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::EllipticProblem;
use crate::error::{Error, Result};
use crate::fem::{assemble_product_load, boundary_inner, BoundaryField, Coefficient, SolverConfig, SpaceFn};
use crate::lm::{self, segment_mass, InverseModel, LmConfig, LmState, StopReason};
use crate::mesh::{build_rect_mesh, Mesh, SegmentTag};
use crate::parabolic::{ParabolicProblem, SpaceTimeFn};

pub use crate::lm::relative_error;

const GAMMA_I: SegmentTag = SegmentTag::Inaccessible;
const GAMMA_A: SegmentTag = SegmentTag::Accessible;

pub const DOMAIN: (f64, f64) = (1.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExampleId {
    #[serde(rename = "5.1")]
    E51,
    #[serde(rename = "5.2")]
    E52,
    #[serde(rename = "5.3")]
    E53,
    #[serde(rename = "5.4")]
    E54,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Elliptic,
    Parabolic,
}

impl ExampleId {
    pub const ALL: [ExampleId; 4] = [ExampleId::E51, ExampleId::E52, ExampleId::E53, ExampleId::E54];

    pub fn kind(self) -> ProblemKind {
        match self {
            ExampleId::E51 | ExampleId::E52 => ProblemKind::Elliptic,
            ExampleId::E53 | ExampleId::E54 => ProblemKind::Parabolic,
        }
    }

    /// The coefficient to be recovered, as a function of `y`.
    pub fn gamma_exact(self, y: f64) -> f64 {
        match self {
            ExampleId::E51 => 3.0 - (PI * y / 2.0).sin(),
            ExampleId::E52 if y <= 1.0 => (y - 1.0).powi(2) + 2.0,
            ExampleId::E52 => -(y - 1.0).powi(2) + 2.0,
            ExampleId::E53 => -(y - 1.0).powi(2) + 2.0,
            ExampleId::E54 => 0.5 * ((PI * y / 2.0).sin() + y.powf(0.25)) + 1.0,
        }
    }

    /// Exact state at `(x, y, t)`; `t` is ignored for elliptic examples.
    pub fn exact_state(self, x: f64, y: f64, t: f64) -> f64 {
        let spatial = x * x + (PI * y).cos();
        match self.kind() {
            ProblemKind::Elliptic => spatial,
            ProblemKind::Parabolic => spatial * t,
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExampleId::E51 => "5.1",
            ExampleId::E52 => "5.2",
            ExampleId::E53 => "5.3",
            ExampleId::E54 => "5.4",
        })
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExampleId::ALL
            .into_iter()
            .find(|id| id.to_string() == s.trim())
            .ok_or_else(|| Error::UnknownExample(s.to_string()))
    }
}

pub enum ExampleProblem {
    Elliptic(EllipticProblem),
    Parabolic(ParabolicProblem),
}

/// Observations on the accessible boundary: one field, or one per time level.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Elliptic(BoundaryField),
    Parabolic(Vec<BoundaryField>),
}

impl Observation {
    fn fields_mut(&mut self) -> Box<dyn Iterator<Item = &mut BoundaryField> + '_> {
        match self {
            Observation::Elliptic(z) => Box::new(std::iter::once(z)),
            Observation::Parabolic(levels) => Box::new(levels.iter_mut()),
        }
    }
}

pub struct Manufactured {
    pub id: ExampleId,
    pub mesh: Arc<Mesh>,
    pub problem: ExampleProblem,
    /// Exact coefficient interpolated at the inaccessible-boundary nodes.
    pub gamma_exact: BoundaryField,
    /// Noise-free observations of the exact state.
    pub observation: Observation,
}

/// Builds the manufactured problem for `id`. `t_final` and `nt` are ignored
/// for elliptic examples.
pub fn make_example(id: ExampleId, mesh: Arc<Mesh>, t_final: f64, nt: usize) -> Result<Manufactured> {
    if (mesh.lx, mesh.ly) != DOMAIN {
        return Err(Error::InvalidMesh(format!(
            "examples live on [0, {}] x [0, {}], got [0, {}] x [0, {}]",
            DOMAIN.0, DOMAIN.1, mesh.lx, mesh.ly
        )));
    }
    if id == ExampleId::E52 && !mesh.ny.is_multiple_of(2) {
        return Err(Error::InvalidMesh(format!(
            "example 5.2 needs an even ny so that y = 1 is a node, got {}",
            mesh.ny
        )));
    }
    let gamma_exact = BoundaryField::interpolate(&mesh, GAMMA_I, |_, y| id.gamma_exact(y));
    let zero_flux: SpaceFn = Arc::new(|_, _| 0.0);
    let (problem, observation) = match id.kind() {
        ProblemKind::Elliptic => {
            let f: SpaceFn = Arc::new(|x, y| (PI * PI + 1.0) * (PI * y).cos() + x * x - 2.0);
            let g: SpaceFn = Arc::new(move |_, y| 2.0 + ((PI * y).cos() + 1.0) * id.gamma_exact(y));
            let prob = EllipticProblem::new(
                mesh.clone(),
                Coefficient::Constant(1.0),
                Coefficient::Constant(1.0),
                f,
                g,
                zero_flux,
            )?;
            let z = BoundaryField::interpolate(&mesh, GAMMA_A, |x, y| id.exact_state(x, y, 0.0));
            (ExampleProblem::Elliptic(prob), Observation::Elliptic(z))
        }
        ProblemKind::Parabolic => {
            let f: SpaceTimeFn =
                Arc::new(|x, y, t| (PI * y).cos() + x * x + (PI * PI * (PI * y).cos() - 2.0) * t);
            let g: SpaceTimeFn =
                Arc::new(move |_, y, t| (2.0 + ((PI * y).cos() + 1.0) * id.gamma_exact(y)) * t);
            let h: SpaceTimeFn = Arc::new(|_, _, _| 0.0);
            let prob = ParabolicProblem::new(
                mesh.clone(),
                Coefficient::Constant(1.0),
                f,
                g,
                h,
                zero_flux,
                t_final,
                nt,
            )?;
            let levels = prob
                .times()
                .into_iter()
                .map(|t| BoundaryField::interpolate(&mesh, GAMMA_A, |x, y| id.exact_state(x, y, t)))
                .collect();
            (ExampleProblem::Parabolic(prob), Observation::Parabolic(levels))
        }
    };
    Ok(Manufactured {
        id,
        mesh,
        problem,
        gamma_exact,
        observation,
    })
}

/// Multiplies every observed value by `1 + δR`, `R ~ U[-1, 1]` i.i.d., drawn
/// from ChaCha8 seeded with `seed` in node-then-level order.
pub fn add_noise(z: &Observation, delta: f64, seed: u64) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = z.clone();
    for field in noisy.fields_mut() {
        for v in &mut field.values {
            *v *= 1.0 + delta * rng.gen_range(-1.0..=1.0);
        }
    }
    noisy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub example: ExampleId,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub t_final: f64,
    pub delta: f64,
    pub seed: u64,
    /// Constant initial guess; `None` starts from the exact coefficient.
    pub gamma0: Option<f64>,
    pub lm: LmConfig,
}

pub const DEFAULT_SEED: u64 = 20_240_501;

impl ExperimentSpec {
    /// The settings of the reference experiments: 16×32 mesh, 2 % noise,
    /// `γ⁰ ≡ 2`, `A = 1`, `ε = 2e-3` (elliptic) or `5e-3` (parabolic, `T = 2`,
    /// 64 steps).
    pub fn defaults(example: ExampleId) -> Self {
        let eps = match example.kind() {
            ProblemKind::Elliptic => 2e-3,
            ProblemKind::Parabolic => 5e-3,
        };
        Self {
            example,
            nx: 16,
            ny: 32,
            nt: 64,
            t_final: 2.0,
            delta: 0.02,
            seed: DEFAULT_SEED,
            gamma0: Some(2.0),
            lm: LmConfig { eps, ..LmConfig::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("noise level must lie in [0, 1), got {}", self.delta)));
        }
        if let Some(g) = self.gamma0 {
            if !(self.lm.gamma_min..=self.lm.gamma_max).contains(&g) {
                return Err(Error::InvalidConfig(format!(
                    "initial guess {g} outside [{}, {}]",
                    self.lm.gamma_min, self.lm.gamma_max
                )));
            }
        }
        self.lm.validate()
    }

    pub fn setup(&self) -> Result<(Manufactured, Observation)> {
        self.validate()?;
        let mesh = Arc::new(build_rect_mesh(self.nx, self.ny, DOMAIN.0, DOMAIN.1)?);
        let mut m = make_example(self.example, mesh, self.t_final, self.nt)?;
        m.problem = match m.problem {
            ExampleProblem::Elliptic(p) => {
                ExampleProblem::Elliptic(p.with_bounds(self.lm.gamma_min, self.lm.gamma_max)?)
            }
            ExampleProblem::Parabolic(p) => {
                ExampleProblem::Parabolic(p.with_bounds(self.lm.gamma_min, self.lm.gamma_max)?)
            }
        };
        let z = add_noise(&m.observation, self.delta, self.seed);
        Ok((m, z))
    }

    fn initial_guess(&self, m: &Manufactured) -> BoundaryField {
        match self.gamma0 {
            Some(g) => BoundaryField::constant(&m.mesh, GAMMA_I, g),
            None => m.gamma_exact.clone(),
        }
    }
}

/// Result of one reconstruction. `state` holds the history up to the last
/// successful step even when `failure` is set.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    /// Inaccessible-boundary node ordinates.
    pub ys: Vec<f64>,
    pub gamma_exact: BoundaryField,
    pub state: LmState,
    pub stop: Option<StopReason>,
    pub failure: Option<(usize, Error)>,
    pub wall_time: f64,
}

impl ExperimentResult {
    pub fn iterations(&self) -> usize {
        self.state.k
    }

    pub fn final_error(&self) -> Option<f64> {
        self.state.history.last().and_then(|row| row.rel_error)
    }
}

/// Runs one reconstruction. Setup problems are returned as errors; failures
/// during the iteration are reported inside the result.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let clock = Instant::now();
    let (m, z) = spec.setup()?;
    let gamma0 = spec.initial_guess(&m);
    let outcome = match (&m.problem, &z) {
        (ExampleProblem::Elliptic(p), Observation::Elliptic(z)) => {
            lm::run(p, gamma0, z, &spec.lm, Some(&m.gamma_exact))
        }
        (ExampleProblem::Parabolic(p), Observation::Parabolic(z)) => {
            lm::run(p, gamma0, z.as_slice(), &spec.lm, Some(&m.gamma_exact))
        }
        _ => unreachable!("problem and observation kinds come from the same example"),
    };
    let (state, stop, failure) = match outcome {
        Ok(out) => (out.state, Some(out.stop), None),
        Err(e) => (*e.state, None, Some((e.iteration, e.source))),
    };
    let ys = m.mesh.segment_coords(GAMMA_I).iter().map(|p| p[1]).collect();
    Ok(ExperimentResult {
        spec: *spec,
        ys,
        gamma_exact: m.gamma_exact,
        state,
        stop,
        failure,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Comparison of one surrogate step with the exact minimizer of the
/// linearized Tikhonov functional
/// `J(δ) = ‖u'(γ^k) δ − r‖²_{Γ_a} + β ‖δ‖²_{Γ_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub residual_norm: f64,
    pub beta: f64,
    pub j_start: f64,
    pub j_surrogate: f64,
    pub j_dense: f64,
    pub surrogate_step: BoundaryField,
    pub dense_step: BoundaryField,
    /// Largest entry of `|Gᵀ B_a r − ∫ u w* φ ds|`, relative to the first
    /// term, comparing the dense gradient with the adjoint one.
    pub gradient_mismatch: f64,
    /// Normal-equation residual norms at the two steps.
    pub normal_residual_surrogate: f64,
    pub normal_residual_dense: f64,
}

fn dvec(f: &BoundaryField) -> DVector<f64> {
    DVector::from_column_slice(&f.values)
}

fn dense_of(m: &crate::fem::SparseMatrix) -> DMatrix<f64> {
    let n = m.dim();
    DMatrix::from_fn(n, n, |i, j| m.get(i, j))
}

/// Builds the linearized operator column by column and solves the
/// Gauss-Newton normal equations densely. Meant for meshes with at most a
/// few dozen inaccessible-boundary nodes. `beta` overrides the residual-based
/// weight when given.
pub fn oracle_optimality_check(
    prob: &EllipticProblem,
    gamma_k: &BoundaryField,
    z: &BoundaryField,
    a: f64,
    beta: Option<f64>,
) -> Result<OracleReport> {
    let mesh = &*prob.mesh;
    let op = prob.operator(gamma_k)?;
    let u = op.forward()?;
    let ua = u.trace(mesh, GAMMA_A);
    let r = z.sub(&ua)?;
    let residual_norm = boundary_inner(mesh, GAMMA_A, &r, &r)?.sqrt();
    let beta = beta.unwrap_or(residual_norm * residual_norm);

    let n_i = mesh.segment(GAMMA_I).len();
    let n_a = mesh.segment(GAMMA_A).len();
    let mut g = DMatrix::zeros(n_a, n_i);
    for j in 0..n_i {
        let mut e = BoundaryField::zeros(mesh, GAMMA_I);
        e.values[j] = 1.0;
        let col = op.derivative(&u, &e)?.trace(mesh, GAMMA_A);
        g.set_column(j, &dvec(&col));
    }
    let b_a = dense_of(&segment_mass(mesh, GAMMA_A));
    let b_i = dense_of(&segment_mass(mesh, GAMMA_I));
    let rv = dvec(&r);
    let normal = g.transpose() * &b_a * &g + &b_i * beta;
    let rhs = g.transpose() * &b_a * &rv;

    let objective = |d: &DVector<f64>| {
        let misfit = &g * d - &rv;
        misfit.dot(&(&b_a * &misfit)) + beta * d.dot(&(&b_i * d))
    };
    let normal_residual = |d: &DVector<f64>| (&normal * d - &rhs).norm();

    let dense = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("Gauss-Newton normal matrix is not positive definite".into()))?
        .solve(&rhs);

    let zeros = DVector::zeros(n_i);
    let (surrogate, gradient_mismatch) = if residual_norm == 0.0 {
        (zeros.clone(), 0.0)
    } else {
        let p = guarded(&r, &ua, 1e-8, mesh)?;
        let w_adj = op.adjoint(&u, &p)?.trace(mesh, GAMMA_I);
        let direction = u.trace(mesh, GAMMA_I).mul(&w_adj)?;
        let weighted = assemble_product_load(mesh, GAMMA_I, &u.trace(mesh, GAMMA_I), &w_adj)?;
        let adjoint_grad = dvec(&weighted.trace(mesh, GAMMA_I));
        let scale = rhs.amax().max(f64::MIN_POSITIVE);
        let mismatch = (&rhs - adjoint_grad).amax() / scale;
        (dvec(&direction) / (a + beta), mismatch)
    };

    Ok(OracleReport {
        residual_norm,
        beta,
        j_start: objective(&zeros),
        j_surrogate: objective(&surrogate),
        j_dense: objective(&dense),
        normal_residual_surrogate: normal_residual(&surrogate),
        normal_residual_dense: normal_residual(&dense),
        surrogate_step: BoundaryField::new(GAMMA_I, surrogate.as_slice().to_vec()),
        dense_step: BoundaryField::new(GAMMA_I, dense.as_slice().to_vec()),
        gradient_mismatch,
    })
}

fn guarded(r: &BoundaryField, u: &BoundaryField, tau: f64, mesh: &Mesh) -> Result<BoundaryField> {
    if let Some((node, &value)) = u.values.iter().enumerate().find(|(_, v)| !(v.abs() >= tau)) {
        return Err(Error::TraceGuard {
            node,
            mesh_node: mesh.segment(GAMMA_A).nodes[node],
            value,
            tau,
            time_level: None,
        });
    }
    r.zip_with(u, |r, u| r / u)
}

/// The 4×8 oracle problem of example 5.1 with a tight solver tolerance.
pub fn tiny_oracle_problem() -> Result<(EllipticProblem, BoundaryField, BoundaryField)> {
    let mesh = Arc::new(build_rect_mesh(4, 8, DOMAIN.0, DOMAIN.1)?);
    let m = make_example(ExampleId::E51, mesh, 1.0, 1)?;
    let ExampleProblem::Elliptic(prob) = m.problem else {
        unreachable!("5.1 is elliptic")
    };
    let Observation::Elliptic(z) = m.observation else {
        unreachable!("5.1 is elliptic")
    };
    Ok((prob.with_solver(SolverConfig::with_tol(1e-14)), m.gamma_exact, z))
}

/// Evaluation at `γ` exposed for the verification battery.
pub fn evaluate_misfit<M: InverseModel + ?Sized>(
    model: &M,
    gamma: &BoundaryField,
    z: &M::Observation,
) -> Result<f64> {
    Ok(model.evaluate(gamma, z, 0.0)?.squared_residual)
}
