//! Time-dependent Robin problem
//!
//! ```text
//!   du/dt - div(a grad u) = f   in Ω x (0, T]
//!   a du/dn + γ u         = g   on Γ_i
//!   a du/dn               = h   on Γ_a
//!   u(., 0)               = u0
//! ```
//!
//! discretized by P1 elements and backward Euler on the uniform grid
//! `t_n = n T / nt`, with data evaluated at the new level. With
//! `Q = M/Δt + K_a + B_γ` a forward step reads
//! `Q u^{n} = M u^{n-1}/Δt + L^{n}`.
//!
//! The adjoint sweep runs backward from a zero state past the final level:
//! `Q w*^{n} = M w*^{n+1}/Δt + load^{n}` for `n = N, ..., 1` with
//! `w*^{N+1} = 0`. This is the exact algebraic transpose of the forward sweep
//! under the right-endpoint time rule (weights Δt on levels 1..N), so the
//! space-time duality holds to solver tolerance.

use std::sync::Arc;

use crate::elliptic::{check_bounds, check_gamma};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_boundary_load, assemble_boundary_mass, assemble_product_load, assemble_load, assemble_mass,
    assemble_stiffness, boundary_inner, conjugate_gradient, BoundaryField, BoundarySource,
    Coefficient, NodalField, SolverConfig, SpaceFn, SparseMatrix,
};
use crate::mesh::{Mesh, SegmentTag};

const GAMMA_I: SegmentTag = SegmentTag::Inaccessible;
const GAMMA_A: SegmentTag = SegmentTag::Accessible;

pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// One nodal field per time level `0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesField {
    pub levels: Vec<NodalField>,
}

impl TimeSeriesField {
    pub fn zeros(nt: usize, nodes: usize) -> Self {
        Self {
            levels: vec![NodalField::zeros(nodes); nt + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn trace(&self, mesh: &Mesh, tag: SegmentTag) -> Vec<BoundaryField> {
        self.levels.iter().map(|u| u.trace(mesh, tag)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, u| m.max(u.max_abs()))
    }
}

pub struct ParabolicProblem {
    pub mesh: Arc<Mesh>,
    pub a: Coefficient,
    pub f: SpaceTimeFn,
    pub g: SpaceTimeFn,
    pub h: SpaceTimeFn,
    pub u0: SpaceFn,
    pub t_final: f64,
    pub nt: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub solver: SolverConfig,
    stiffness: SparseMatrix,
    mass: SparseMatrix,
    /// `L^n` for `n = 0..=nt`; entry 0 is unused.
    loads: Vec<NodalField>,
}

impl std::fmt::Debug for ParabolicProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParabolicProblem")
            .field("nodes", &self.mesh.num_nodes())
            .field("t_final", &self.t_final)
            .field("nt", &self.nt)
            .field("gamma_min", &self.gamma_min)
            .field("gamma_max", &self.gamma_max)
            .finish_non_exhaustive()
    }
}

impl ParabolicProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: Arc<Mesh>,
        a: Coefficient,
        f: SpaceTimeFn,
        g: SpaceTimeFn,
        h: SpaceTimeFn,
        u0: SpaceFn,
        t_final: f64,
        nt: usize,
    ) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) || nt == 0 {
            return Err(Error::InvalidConfig(format!(
                "need T > 0 and nt >= 1, got T = {t_final}, nt = {nt}"
            )));
        }
        let stiffness = assemble_stiffness(&mesh, &a)?;
        let mass = assemble_mass(&mesh, &Coefficient::Constant(1.0))?;
        let dt = t_final / nt as f64;
        let mut loads = Vec::with_capacity(nt + 1);
        loads.push(NodalField::zeros(mesh.num_nodes()));
        for n in 1..=nt {
            let t = n as f64 * dt;
            let mut load = assemble_load(&mesh, &|x, y| f(x, y, t));
            load.add_scaled(
                1.0,
                &assemble_boundary_load(&mesh, GAMMA_I, BoundarySource::Function(&|x, y| g(x, y, t)))?,
            );
            load.add_scaled(
                1.0,
                &assemble_boundary_load(&mesh, GAMMA_A, BoundarySource::Function(&|x, y| h(x, y, t)))?,
            );
            loads.push(load);
        }
        Ok(Self {
            mesh,
            a,
            f,
            g,
            h,
            u0,
            t_final,
            nt,
            gamma_min: 0.1,
            gamma_max: 10.0,
            solver: SolverConfig::default(),
            stiffness,
            mass,
            loads,
        })
    }

    pub fn with_bounds(mut self, gamma_min: f64, gamma_max: f64) -> Result<Self> {
        check_bounds(gamma_min, gamma_max)?;
        self.gamma_min = gamma_min;
        self.gamma_max = gamma_max;
        Ok(self)
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.nt).map(|n| n as f64 * dt).collect()
    }

    pub fn operator(&self, gamma: &BoundaryField) -> Result<ParabolicOperator<'_>> {
        check_gamma(&self.mesh, gamma, self.gamma_min, self.gamma_max)?;
        let mut step = self.mass.scaled(1.0 / self.dt());
        step.add_scaled(1.0, &self.stiffness);
        step.add_scaled(
            1.0,
            &assemble_boundary_mass(&self.mesh, GAMMA_I, BoundarySource::Nodal(gamma))?,
        );
        Ok(ParabolicOperator {
            problem: self,
            step,
        })
    }
}

/// The implicit-Euler step matrix `M/Δt + K_a + B_γ` for one γ.
#[derive(Debug)]
pub struct ParabolicOperator<'p> {
    problem: &'p ParabolicProblem,
    step: SparseMatrix,
}

impl ParabolicOperator<'_> {
    pub fn mesh(&self) -> &Mesh {
        &self.problem.mesh
    }

    pub fn step_matrix(&self) -> &SparseMatrix {
        &self.step
    }

    fn solve_into(&self, rhs: &[f64], x: &mut [f64]) -> Result<()> {
        conjugate_gradient(&self.step, rhs, x, &self.problem.solver).map(|_| ())
    }

    /// Runs `Q x^{n} = M x^{n-1}/Δt + loads[n]` for `n = 1..=nt` from `x0`.
    /// `loads[0]` is ignored.
    pub fn forward_sweep(&self, x0: NodalField, loads: &[NodalField]) -> Result<TimeSeriesField> {
        let nt = self.problem.nt;
        if loads.len() != nt + 1 {
            return Err(Error::LengthMismatch {
                expected: nt + 1,
                got: loads.len(),
            });
        }
        let inv_dt = 1.0 / self.problem.dt();
        let mut levels = Vec::with_capacity(nt + 1);
        levels.push(x0);
        for load in &loads[1..] {
            let prev = levels.last().expect("initial level");
            let mut rhs = self.problem.mass.mul_vec(&prev.values);
            for (r, l) in rhs.iter_mut().zip(&load.values) {
                *r = *r * inv_dt + l;
            }
            let mut x = prev.values.clone();
            self.solve_into(&rhs, &mut x)?;
            levels.push(NodalField::new(x));
        }
        Ok(TimeSeriesField { levels })
    }

    /// Runs `Q x^{n} = M x^{n+1}/Δt + loads[n]` for `n = nt, ..., 0` with
    /// `x^{nt+1} = 0`. Level 0 is the unloaded continuation of the sweep.
    pub fn backward_sweep(&self, loads: &[NodalField]) -> Result<TimeSeriesField> {
        let nt = self.problem.nt;
        if loads.len() != nt + 1 {
            return Err(Error::LengthMismatch {
                expected: nt + 1,
                got: loads.len(),
            });
        }
        let n_nodes = self.problem.mesh.num_nodes();
        let inv_dt = 1.0 / self.problem.dt();
        let mut levels = vec![NodalField::zeros(n_nodes); nt + 1];
        let mut next = NodalField::zeros(n_nodes);
        for n in (0..=nt).rev() {
            let mut rhs = self.problem.mass.mul_vec(&next.values);
            for r in rhs.iter_mut() {
                *r *= inv_dt;
            }
            if n > 0 {
                for (r, l) in rhs.iter_mut().zip(&loads[n].values) {
                    *r += l;
                }
            }
            let mut x = next.values.clone();
            self.solve_into(&rhs, &mut x)?;
            next = NodalField::new(x);
            levels[n] = next.clone();
        }
        Ok(TimeSeriesField { levels })
    }

    pub fn forward(&self) -> Result<TimeSeriesField> {
        let u0 = NodalField::interpolate(self.mesh(), |x, y| (self.problem.u0)(x, y));
        self.forward_sweep(u0, &self.problem.loads)
    }

    /// `w = u'(γ) d`: zero initial value, load `-∫_{Γ_i} d_h u_h^{n} φ ds`.
    pub fn derivative(&self, u: &TimeSeriesField, d: &BoundaryField) -> Result<TimeSeriesField> {
        let mesh = self.mesh();
        check_levels(u.len(), self.problem.nt)?;
        let loads = u
            .levels
            .iter()
            .map(|un| {
                Ok(assemble_product_load(mesh, GAMMA_I, d, &un.trace(mesh, GAMMA_I))?.scaled(-1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        self.forward_sweep(NodalField::zeros(mesh.num_nodes()), &loads)
    }

    /// `w* = u'(γ)* p`: backward sweep with load `-∫_{Γ_a} I_h(p^{n} u^{n}) φ ds`.
    /// `p[0]` is never used.
    pub fn adjoint(&self, u: &TimeSeriesField, p: &[BoundaryField]) -> Result<TimeSeriesField> {
        let mesh = self.mesh();
        check_levels(u.len(), self.problem.nt)?;
        check_levels(p.len(), self.problem.nt)?;
        let mut loads = vec![NodalField::zeros(mesh.num_nodes())];
        for (un, pn) in u.levels.iter().zip(p).skip(1) {
            let pu = pn.mul(&un.trace(mesh, GAMMA_A))?;
            loads.push(assemble_boundary_load(mesh, GAMMA_A, BoundarySource::Nodal(&pu))?.scaled(-1.0));
        }
        self.backward_sweep(&loads)
    }
}

fn check_levels(got: usize, nt: usize) -> Result<()> {
    if got != nt + 1 {
        return Err(Error::LengthMismatch {
            expected: nt + 1,
            got,
        });
    }
    Ok(())
}

pub fn solve_forward_parabolic(prob: &ParabolicProblem, gamma: &BoundaryField) -> Result<TimeSeriesField> {
    prob.operator(gamma)?.forward()
}

pub fn solve_derivative_parabolic(
    prob: &ParabolicProblem,
    gamma: &BoundaryField,
    u: &TimeSeriesField,
    d: &BoundaryField,
) -> Result<TimeSeriesField> {
    prob.operator(gamma)?.derivative(u, d)
}

pub fn solve_adjoint_parabolic(
    prob: &ParabolicProblem,
    gamma: &BoundaryField,
    u: &TimeSeriesField,
    p: &[BoundaryField],
) -> Result<TimeSeriesField> {
    prob.operator(gamma)?.adjoint(u, p)
}

/// Right-endpoint rectangle rule: `Σ_{n=1}^{N} Δt v^{n}`. Level 0 carries
/// zero weight.
pub fn time_integral_boundary(series: &[BoundaryField], nt: usize, dt: f64) -> Result<BoundaryField> {
    check_levels(series.len(), nt)?;
    let mut acc = series[0].scaled(0.0);
    for v in &series[1..] {
        acc = acc.zip_with(v, |a, b| a + dt * b)?;
    }
    Ok(acc)
}

/// `Σ_{n=1}^{N} Δt ⟨u^{n}, v^{n}⟩_segment`.
pub fn time_inner_boundary(
    mesh: &Mesh,
    tag: SegmentTag,
    u: &[BoundaryField],
    v: &[BoundaryField],
    nt: usize,
    dt: f64,
) -> Result<f64> {
    check_levels(u.len(), nt)?;
    check_levels(v.len(), nt)?;
    let mut acc = 0.0;
    for (un, vn) in u.iter().zip(v).skip(1) {
        acc += dt * boundary_inner(mesh, tag, un, vn)?;
    }
    Ok(acc)
}
