//! Stationary Robin problem
//!
//! ```text
//!   -div(a grad u) + c u = f   in Ω
//!   a du/dn + γ u        = g   on Γ_i
//!   a du/dn              = h   on Γ_a
//! ```
//!
//! together with its linearization in γ and the adjoint of that
//! linearization. All three share the matrix `K_a + M_c + B_γ`; the adjoint
//! is the discrete transpose of the derivative map, so the duality
//! `⟨w, u p⟩_{Γ_a} = ∫_{Γ_i} d u w* ds` holds up to solver tolerance.
//!
//! The derivative load integrates the product of the interpolants of `d` and
//! `u`, which makes it the exact derivative of `B_γ u`. On `Γ_a` the product
//! `p u` is formed nodally, so that `p = r / u` gives back the residual `r`
//! without quadrature error.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_boundary_load, assemble_boundary_mass, assemble_product_load, assemble_load, assemble_mass,
    assemble_stiffness, conjugate_gradient, BoundaryField, BoundarySource, Coefficient,
    NodalField, SolverConfig, SpaceFn, SparseMatrix,
};
use crate::mesh::{Mesh, SegmentTag};

const GAMMA_I: SegmentTag = SegmentTag::Inaccessible;
const GAMMA_A: SegmentTag = SegmentTag::Accessible;

pub struct EllipticProblem {
    pub mesh: Arc<Mesh>,
    pub a: Coefficient,
    pub c: Coefficient,
    pub f: SpaceFn,
    pub g: SpaceFn,
    pub h: SpaceFn,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub solver: SolverConfig,
    base: SparseMatrix,
    rhs: NodalField,
}

impl std::fmt::Debug for EllipticProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EllipticProblem")
            .field("nodes", &self.mesh.num_nodes())
            .field("a", &self.a)
            .field("c", &self.c)
            .field("gamma_min", &self.gamma_min)
            .field("gamma_max", &self.gamma_max)
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_bounds(gamma_min: f64, gamma_max: f64) -> Result<()> {
    if !(gamma_min > 0.0 && gamma_max >= gamma_min && gamma_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "Robin coefficient bounds must satisfy 0 < gamma_min <= gamma_max < inf, got [{gamma_min}, {gamma_max}]"
        )));
    }
    Ok(())
}

pub(crate) fn check_gamma(mesh: &Mesh, gamma: &BoundaryField, lo: f64, hi: f64) -> Result<()> {
    gamma.check_on(mesh, GAMMA_I)?;
    if let Some((node, &value)) = gamma
        .values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= lo && **v <= hi))
    {
        return Err(Error::InvalidConfig(format!(
            "Robin coefficient {value} at inaccessible node {node} outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

impl EllipticProblem {
    /// Assembles the γ-independent part of the system. Bounds default to
    /// `[0.1, 10]`.
    pub fn new(
        mesh: Arc<Mesh>,
        a: Coefficient,
        c: Coefficient,
        f: SpaceFn,
        g: SpaceFn,
        h: SpaceFn,
    ) -> Result<Self> {
        let mut base = assemble_stiffness(&mesh, &a)?;
        base.add_scaled(1.0, &assemble_mass(&mesh, &c)?);
        let mut rhs = assemble_load(&mesh, &*f);
        rhs.add_scaled(1.0, &assemble_boundary_load(&mesh, GAMMA_I, BoundarySource::Function(&*g))?);
        rhs.add_scaled(1.0, &assemble_boundary_load(&mesh, GAMMA_A, BoundarySource::Function(&*h))?);
        Ok(Self {
            mesh,
            a,
            c,
            f,
            g,
            h,
            gamma_min: 0.1,
            gamma_max: 10.0,
            solver: SolverConfig::default(),
            base,
            rhs,
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

    /// Assembles `K_a + M_c + B_γ` for one coefficient.
    pub fn operator(&self, gamma: &BoundaryField) -> Result<EllipticOperator<'_>> {
        check_gamma(&self.mesh, gamma, self.gamma_min, self.gamma_max)?;
        let mut matrix = self.base.clone();
        matrix.add_scaled(
            1.0,
            &assemble_boundary_mass(&self.mesh, GAMMA_I, BoundarySource::Nodal(gamma))?,
        );
        Ok(EllipticOperator {
            problem: self,
            matrix,
        })
    }
}

/// The system matrix for one γ, shared by the forward, derivative and adjoint
/// solves.
#[derive(Debug)]
pub struct EllipticOperator<'p> {
    problem: &'p EllipticProblem,
    matrix: SparseMatrix,
}

impl EllipticOperator<'_> {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn mesh(&self) -> &Mesh {
        &self.problem.mesh
    }

    /// Solves with an arbitrary load vector.
    pub fn solve(&self, load: &NodalField) -> Result<NodalField> {
        let mut x = vec![0.0; load.len()];
        conjugate_gradient(&self.matrix, &load.values, &mut x, &self.problem.solver)?;
        Ok(NodalField::new(x))
    }

    pub fn forward(&self) -> Result<NodalField> {
        self.solve(&self.problem.rhs)
    }

    /// `w = u'(γ) d`: same operator, load `-∫_{Γ_i} d_h u_h φ ds`.
    pub fn derivative(&self, u: &NodalField, d: &BoundaryField) -> Result<NodalField> {
        let mesh = self.mesh();
        let load = assemble_product_load(mesh, GAMMA_I, d, &u.trace(mesh, GAMMA_I))?;
        self.solve(&load.scaled(-1.0))
    }

    /// `w* = u'(γ)* p`: same operator, load `-∫_{Γ_a} I_h(p u) φ ds`.
    pub fn adjoint(&self, u: &NodalField, p: &BoundaryField) -> Result<NodalField> {
        let mesh = self.mesh();
        let pu = p.mul(&u.trace(mesh, GAMMA_A))?;
        let load = assemble_boundary_load(mesh, GAMMA_A, BoundarySource::Nodal(&pu))?;
        self.solve(&load.scaled(-1.0))
    }
}

pub fn solve_forward(prob: &EllipticProblem, gamma: &BoundaryField) -> Result<NodalField> {
    prob.operator(gamma)?.forward()
}

pub fn solve_derivative(
    prob: &EllipticProblem,
    gamma: &BoundaryField,
    u: &NodalField,
    d: &BoundaryField,
) -> Result<NodalField> {
    prob.operator(gamma)?.derivative(u, d)
}

pub fn solve_adjoint(
    prob: &EllipticProblem,
    gamma: &BoundaryField,
    u: &NodalField,
    p: &BoundaryField,
) -> Result<NodalField> {
    prob.operator(gamma)?.adjoint(u, p)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_relative_eq;

    use super::*;
    use crate::fem::{boundary_inner, boundary_triple};
    use crate::mesh::build_rect_mesh;

    fn manufactured(nx: usize, ny: usize, gamma: fn(f64) -> f64) -> EllipticProblem {
        let mesh = Arc::new(build_rect_mesh(nx, ny, 1.0, 2.0).unwrap());
        EllipticProblem::new(
            mesh,
            Coefficient::Constant(1.0),
            Coefficient::Constant(1.0),
            Arc::new(|x, y| (PI * PI + 1.0) * (PI * y).cos() + x * x - 2.0),
            Arc::new(move |_, y| 2.0 + ((PI * y).cos() + 1.0) * gamma(y)),
            Arc::new(|_, _| 0.0),
        )
        .unwrap()
        .with_solver(SolverConfig::with_tol(1e-12))
    }

    fn gamma_51(y: f64) -> f64 {
        3.0 - (PI * y / 2.0).sin()
    }

    fn gamma_52(y: f64) -> f64 {
        if y <= 1.0 {
            (y - 1.0).powi(2) + 2.0
        } else {
            -(y - 1.0).powi(2) + 2.0
        }
    }

    fn max_nodal_error(prob: &EllipticProblem, gamma: fn(f64) -> f64) -> f64 {
        let g = BoundaryField::interpolate(&prob.mesh, GAMMA_I, |_, y| gamma(y));
        let u = solve_forward(prob, &g).unwrap();
        let exact = NodalField::interpolate(&prob.mesh, |x, y| x * x + (PI * y).cos());
        u.values
            .iter()
            .zip(&exact.values)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    #[test]
    fn forward_matches_manufactured_solution() {
        let coarse = max_nodal_error(&manufactured(8, 16, gamma_51), gamma_51);
        let fine = max_nodal_error(&manufactured(16, 32, gamma_51), gamma_51);
        assert!(fine < 1e-2, "max nodal error {fine}");
        assert!(coarse / fine > 3.0, "ratio {}", coarse / fine);
        // a different γ with g tracking it leaves the exact solution unchanged
        let other = max_nodal_error(&manufactured(16, 32, gamma_52), gamma_52);
        assert!(other < 1e-2, "max nodal error {other}");
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mesh = Arc::new(build_rect_mesh(4, 8, 1.0, 2.0).unwrap());
        let zero: SpaceFn = Arc::new(|_, _| 0.0);
        let prob = EllipticProblem::new(
            mesh.clone(),
            Coefficient::Constant(1.0),
            Coefficient::Constant(1.0),
            zero.clone(),
            zero.clone(),
            zero,
        )
        .unwrap();
        let g = BoundaryField::constant(&mesh, GAMMA_I, 2.0);
        assert_eq!(solve_forward(&prob, &g).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn forward_is_linear_in_data() {
        let mesh = Arc::new(build_rect_mesh(4, 8, 1.0, 2.0).unwrap());
        let build = |s: f64| {
            EllipticProblem::new(
                mesh.clone(),
                Coefficient::Constant(1.0),
                Coefficient::Constant(1.0),
                Arc::new(move |x, y| s * (x + y)),
                Arc::new(move |_, y| s * (1.0 + y)),
                Arc::new(move |x, _| s * x),
            )
            .unwrap()
            .with_solver(SolverConfig::with_tol(1e-13))
        };
        let g = BoundaryField::constant(&mesh, GAMMA_I, 1.5);
        let u1 = solve_forward(&build(1.0), &g).unwrap();
        let u2 = solve_forward(&build(2.0), &g).unwrap();
        for (a, b) in u1.values.iter().zip(&u2.values) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_bounds_gamma() {
        let prob = manufactured(4, 8, gamma_51);
        let g = BoundaryField::constant(&prob.mesh, GAMMA_I, 0.0);
        assert!(solve_forward(&prob, &g).is_err());
        let wrong = BoundaryField::constant(&prob.mesh, GAMMA_A, 1.0);
        assert!(solve_forward(&prob, &wrong).is_err());
    }

    #[test]
    fn derivative_zero_and_linear() {
        let prob = manufactured(4, 8, gamma_51);
        let g = BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0);
        let op = prob.operator(&g).unwrap();
        let u = op.forward().unwrap();
        let zero = BoundaryField::zeros(&prob.mesh, GAMMA_I);
        assert_eq!(op.derivative(&u, &zero).unwrap().max_abs(), 0.0);
        let d = BoundaryField::interpolate(&prob.mesh, GAMMA_I, |_, y| y.sin());
        let w1 = op.derivative(&u, &d).unwrap();
        let w2 = op.derivative(&u, &d.scaled(2.0)).unwrap();
        for (a, b) in w1.values.iter().zip(&w2.values) {
            assert_relative_eq!(2.0 * a, *b, max_relative = 1e-9, epsilon = 1e-13);
        }
    }

    #[test]
    fn adjoint_zero_direction() {
        let prob = manufactured(4, 8, gamma_51);
        let g = BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0);
        let op = prob.operator(&g).unwrap();
        let u = op.forward().unwrap();
        let p = BoundaryField::zeros(&prob.mesh, GAMMA_A);
        assert_eq!(op.adjoint(&u, &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn duality_between_derivative_and_adjoint() {
        let prob = manufactured(8, 16, gamma_51);
        let mesh = &prob.mesh;
        let g = BoundaryField::interpolate(mesh, GAMMA_I, |_, y| gamma_51(y));
        let op = prob.operator(&g).unwrap();
        let u = op.forward().unwrap();
        let d = BoundaryField::interpolate(mesh, GAMMA_I, |_, y| (3.0 * y).cos() + 0.2);
        let p = BoundaryField::interpolate(mesh, GAMMA_A, |x, y| x - y * y + 0.5);
        let w = op.derivative(&u, &d).unwrap();
        let ws = op.adjoint(&u, &p).unwrap();
        let lhs = boundary_inner(mesh, GAMMA_A, &w.trace(mesh, GAMMA_A), &u.trace(mesh, GAMMA_A).mul(&p).unwrap()).unwrap();
        let rhs = boundary_triple(mesh, GAMMA_I, &d, &u.trace(mesh, GAMMA_I), &ws.trace(mesh, GAMMA_I)).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
    }

    #[test]
    fn operator_reuse_matches_fresh_assembly() {
        let prob = manufactured(4, 8, gamma_51);
        let g = BoundaryField::interpolate(&prob.mesh, GAMMA_I, |_, y| gamma_51(y));
        let op = prob.operator(&g).unwrap();
        let u = op.forward().unwrap();
        let d = BoundaryField::constant(&prob.mesh, GAMMA_I, 1.0);
        assert_eq!(op.derivative(&u, &d).unwrap(), solve_derivative(&prob, &g, &u, &d).unwrap());
        assert_eq!(u, solve_forward(&prob, &g).unwrap());
    }
}
