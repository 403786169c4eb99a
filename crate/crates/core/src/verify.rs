//! Fast numerical self-checks: discrete adjoint identities, finite-difference
//! derivative checks, the dense Gauss-Newton oracle and manufactured-solution
//! convergence of the forward solvers.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::EllipticProblem;
use crate::error::{Error, Result};
use crate::experiments::{
    add_noise, make_example, oracle_optimality_check, tiny_oracle_problem, ExampleId, ExampleProblem,
    Manufactured, Observation, OracleReport, ProblemKind, DOMAIN,
};
use crate::fem::{boundary_inner, boundary_triple, l2_error, BoundaryField, SolverConfig};
use crate::lm::{lm_step, LmConfig, LmState};
use crate::mesh::{build_rect_mesh, SegmentTag};
use crate::parabolic::{time_inner_boundary, ParabolicProblem};

const GAMMA_I: SegmentTag = SegmentTag::Inaccessible;
const GAMMA_A: SegmentTag = SegmentTag::Accessible;

pub const ADJOINT_TOL: f64 = 1e-8;
pub const FD_ORDER_RANGE: (f64, f64) = (0.7, 1.3);
pub const FD_STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const ELLIPTIC_RATIO_MIN: f64 = 3.5;
pub const PARABOLIC_RATIO_MIN: f64 = 1.8;
pub const ORACLE_REL_TOL: f64 = 1e-12;
pub const STRICT_RESIDUAL: f64 = 1e-10;

fn tight() -> SolverConfig {
    SolverConfig::with_tol(1e-13)
}

fn setup(id: ExampleId, nx: usize, ny: usize, nt: usize) -> Result<Manufactured> {
    let mesh = Arc::new(build_rect_mesh(nx, ny, DOMAIN.0, DOMAIN.1)?);
    let mut m = make_example(id, mesh, 2.0, nt)?;
    m.problem = match m.problem {
        ExampleProblem::Elliptic(p) => ExampleProblem::Elliptic(p.with_solver(tight())),
        ExampleProblem::Parabolic(p) => ExampleProblem::Parabolic(p.with_solver(tight())),
    };
    Ok(m)
}

fn random_field(rng: &mut ChaCha8Rng, len: usize, tag: SegmentTag) -> BoundaryField {
    BoundaryField::new(tag, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn perturbed(rng: &mut ChaCha8Rng, gamma: &BoundaryField) -> BoundaryField {
    let values = gamma.values.iter().map(|g| g + rng.gen_range(-0.5..0.5)).collect();
    BoundaryField::new(gamma.tag, values)
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative defect over random pairs `(d, p)` in
/// `⟨u'(γ)d, u p⟩_{Γ_a} = ∫_{Γ_i} d u w* ds`, where `w*` is the adjoint state
/// for `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointCheck {
    pub pairs: usize,
    pub max_rel_defect: f64,
}

pub fn adjoint_identity_elliptic(nx: usize, ny: usize, pairs: usize, seed: u64) -> Result<AdjointCheck> {
    let m = setup(ExampleId::E51, nx, ny, 1)?;
    let ExampleProblem::Elliptic(prob) = &m.problem else {
        unreachable!("5.1 is elliptic")
    };
    let mesh = &*m.mesh;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let gamma = perturbed(&mut rng, &m.gamma_exact);
        let op = prob.operator(&gamma)?;
        let u = op.forward()?;
        let d = random_field(&mut rng, mesh.segment(GAMMA_I).len(), GAMMA_I);
        let p = random_field(&mut rng, mesh.segment(GAMMA_A).len(), GAMMA_A);
        let w = op.derivative(&u, &d)?.trace(mesh, GAMMA_A);
        let w_adj = op.adjoint(&u, &p)?.trace(mesh, GAMMA_I);
        let lhs = boundary_inner(mesh, GAMMA_A, &w, &u.trace(mesh, GAMMA_A).mul(&p)?)?;
        let rhs = boundary_triple(mesh, GAMMA_I, &d, &u.trace(mesh, GAMMA_I), &w_adj)?;
        worst = worst.max(rel_gap(lhs, rhs));
    }
    Ok(AdjointCheck {
        pairs,
        max_rel_defect: worst,
    })
}

/// Space-time version with the right-endpoint rule on both sides.
pub fn adjoint_identity_parabolic(
    nx: usize,
    ny: usize,
    nt: usize,
    pairs: usize,
    seed: u64,
) -> Result<AdjointCheck> {
    let m = setup(ExampleId::E53, nx, ny, nt)?;
    let ExampleProblem::Parabolic(prob) = &m.problem else {
        unreachable!("5.3 is parabolic")
    };
    let mesh = &*m.mesh;
    let dt = prob.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let gamma = perturbed(&mut rng, &m.gamma_exact);
        let op = prob.operator(&gamma)?;
        let u = op.forward()?;
        let d = random_field(&mut rng, mesh.segment(GAMMA_I).len(), GAMMA_I);
        let p: Vec<_> = (0..=nt)
            .map(|_| random_field(&mut rng, mesh.segment(GAMMA_A).len(), GAMMA_A))
            .collect();
        let w = op.derivative(&u, &d)?.trace(mesh, GAMMA_A);
        let w_adj = op.adjoint(&u, &p)?.trace(mesh, GAMMA_I);
        let u_a = u.trace(mesh, GAMMA_A);
        let u_i = u.trace(mesh, GAMMA_I);
        let up = u_a.iter().zip(&p).map(|(u, p)| u.mul(p)).collect::<Result<Vec<_>>>()?;
        let lhs = time_inner_boundary(mesh, GAMMA_A, &w, &up, nt, dt)?;
        let mut rhs = 0.0;
        for (un, wn) in u_i.iter().zip(&w_adj).skip(1) {
            rhs += dt * boundary_triple(mesh, GAMMA_I, &d, un, wn)?;
        }
        worst = worst.max(rel_gap(lhs, rhs));
    }
    Ok(AdjointCheck {
        pairs,
        max_rel_defect: worst,
    })
}

/// Forward-difference errors `‖(u(γ+εd) − u(γ))/ε − u'(γ)d‖` on the
/// accessible boundary at `γ ≡ 2`, `d = γ* − 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub example: ExampleId,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Observed orders between consecutive steps.
    pub orders: Vec<f64>,
}

impl FdCheck {
    pub fn passed(&self) -> bool {
        let (lo, hi) = FD_ORDER_RANGE;
        !self.orders.is_empty() && self.orders.iter().all(|o| (lo..=hi).contains(o))
    }
}

pub fn derivative_fd(id: ExampleId, nx: usize, ny: usize, nt: usize, steps: &[f64]) -> Result<FdCheck> {
    let m = setup(id, nx, ny, nt)?;
    let mesh = &*m.mesh;
    let gamma = BoundaryField::constant(mesh, GAMMA_I, 2.0);
    let d = m.gamma_exact.sub(&gamma)?;
    let errors = match &m.problem {
        ExampleProblem::Elliptic(prob) => fd_errors_elliptic(prob, &gamma, &d, steps)?,
        ExampleProblem::Parabolic(prob) => fd_errors_parabolic(prob, &gamma, &d, steps)?,
    };
    let orders = errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, s)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln())
        .collect();
    Ok(FdCheck {
        example: id,
        steps: steps.to_vec(),
        errors,
        orders,
    })
}

fn fd_errors_elliptic(prob: &EllipticProblem, gamma: &BoundaryField, d: &BoundaryField, steps: &[f64]) -> Result<Vec<f64>> {
    let mesh = &*prob.mesh;
    let op = prob.operator(gamma)?;
    let u = op.forward()?;
    let lin = op.derivative(&u, d)?.trace(mesh, GAMMA_A);
    let base = u.trace(mesh, GAMMA_A);
    steps
        .iter()
        .map(|&eps| {
            let shifted = prob.operator(&gamma.add(&d.scaled(eps))?)?.forward()?.trace(mesh, GAMMA_A);
            let diff = shifted.zip_with(&base, |a, b| (a - b) / eps)?.sub(&lin)?;
            Ok(boundary_inner(mesh, GAMMA_A, &diff, &diff)?.sqrt())
        })
        .collect()
}

fn fd_errors_parabolic(prob: &ParabolicProblem, gamma: &BoundaryField, d: &BoundaryField, steps: &[f64]) -> Result<Vec<f64>> {
    let mesh = &*prob.mesh;
    let (nt, dt) = (prob.nt, prob.dt());
    let op = prob.operator(gamma)?;
    let u = op.forward()?;
    let lin = op.derivative(&u, d)?.trace(mesh, GAMMA_A);
    let base = u.trace(mesh, GAMMA_A);
    steps
        .iter()
        .map(|&eps| {
            let shifted = prob.operator(&gamma.add(&d.scaled(eps))?)?.forward()?.trace(mesh, GAMMA_A);
            let diff = shifted
                .iter()
                .zip(&base)
                .zip(&lin)
                .map(|((s, b), l)| s.zip_with(b, |a, b| (a - b) / eps)?.sub(l))
                .collect::<Result<Vec<_>>>()?;
            Ok(time_inner_boundary(mesh, GAMMA_A, &diff, &diff, nt, dt)?.sqrt())
        })
        .collect()
}

/// Oracle comparisons on the 4×8 problem of example 5.1 with 2 % noise, at a
/// constant start, at random perturbations of the exact coefficient and
/// along the first iterates of the reconstruction.
pub fn oracle_battery(random_starts: usize, iterates: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let (prob, gamma_exact, z) = tiny_oracle_problem()?;
    let Observation::Elliptic(z) = add_noise(&Observation::Elliptic(z), 0.02, seed) else {
        unreachable!("elliptic observation")
    };
    let cfg = LmConfig::default();
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![BoundaryField::constant(&prob.mesh, GAMMA_I, 2.0)];
    starts.extend((0..random_starts).map(|_| perturbed(&mut rng, &gamma_exact)));
    for gamma in &starts {
        reports.push(oracle_optimality_check(&prob, gamma, &z, cfg.a, None)?);
    }
    let mut state = LmState::new(starts[0].clone());
    for _ in 0..iterates {
        state = lm_step(&prob, &state, &z, &cfg, None)?;
        reports.push(oracle_optimality_check(&prob, &state.gamma, &z, cfg.a, None)?);
    }
    Ok(reports)
}

/// `J_dense ≤ J_surrogate ≤ J(γ^k)`, strictly on the right when the residual
/// is not negligible.
pub fn oracle_ordering_holds(r: &OracleReport) -> bool {
    let dense_ok = r.j_dense <= r.j_surrogate * (1.0 + ORACLE_REL_TOL);
    let descent = if r.residual_norm > STRICT_RESIDUAL {
        r.j_surrogate < r.j_start
    } else {
        r.j_surrogate <= r.j_start * (1.0 + ORACLE_REL_TOL)
    };
    dense_ok && descent
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub coarse: f64,
    pub fine: f64,
}

impl Convergence {
    pub fn ratio(&self) -> f64 {
        self.coarse / self.fine
    }
}

/// `L²(Ω)` error of the elliptic example-5.1 solve at the exact coefficient.
pub fn elliptic_l2_error(nx: usize, ny: usize) -> Result<f64> {
    let m = setup(ExampleId::E51, nx, ny, 1)?;
    let ExampleProblem::Elliptic(prob) = &m.problem else {
        unreachable!("5.1 is elliptic")
    };
    let u = prob.operator(&m.gamma_exact)?.forward()?;
    l2_error(&m.mesh, &u, &|x, y| ExampleId::E51.exact_state(x, y, 0.0))
}

/// `max_n ‖u_h^n − u(t_n)‖_{L²(Ω)}` for example 5.3 at the exact coefficient.
pub fn parabolic_l2_error(nx: usize, ny: usize, nt: usize) -> Result<f64> {
    let m = setup(ExampleId::E53, nx, ny, nt)?;
    let ExampleProblem::Parabolic(prob) = &m.problem else {
        unreachable!("5.3 is parabolic")
    };
    let u = prob.operator(&m.gamma_exact)?.forward()?;
    prob.times()
        .iter()
        .zip(&u.levels)
        .map(|(&t, un)| l2_error(&m.mesh, un, &|x, y| ExampleId::E53.exact_state(x, y, t)))
        .try_fold(0.0f64, |acc, e| Ok(acc.max(e?)))
}

pub fn fem_convergence_elliptic() -> Result<Convergence> {
    Ok(Convergence {
        coarse: elliptic_l2_error(8, 16)?,
        fine: elliptic_l2_error(16, 32)?,
    })
}

/// Halves the mesh width and the time step together.
pub fn fem_convergence_parabolic() -> Result<Convergence> {
    Ok(Convergence {
        coarse: parabolic_l2_error(8, 16, 16)?,
        fine: parabolic_l2_error(16, 32, 32)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckGroup {
    Adjoint,
    Derivative,
    Oracle,
    Fem,
}

impl CheckGroup {
    pub const ALL: [CheckGroup; 4] = [CheckGroup::Adjoint, CheckGroup::Derivative, CheckGroup::Oracle, CheckGroup::Fem];
}

impl fmt::Display for CheckGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckGroup::Adjoint => "adjoint",
            CheckGroup::Derivative => "derivative",
            CheckGroup::Oracle => "oracle",
            CheckGroup::Fem => "fem",
        })
    }
}

impl std::str::FromStr for CheckGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        CheckGroup::ALL
            .into_iter()
            .find(|g| g.to_string() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown check group `{s}` (expected adjoint, derivative, oracle or fem)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub group: CheckGroup,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(group: CheckGroup, name: &str, result: Result<(bool, String)>) -> CheckOutcome {
    let (passed, detail) = result.unwrap_or_else(|e: Error| (false, format!("error: {e}")));
    CheckOutcome {
        group,
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn run_group(group: CheckGroup) -> Vec<CheckOutcome> {
    let adjoint = |res: Result<AdjointCheck>| {
        res.map(|c| (c.max_rel_defect <= ADJOINT_TOL, format!("max relative defect {:.3e} over {} pairs", c.max_rel_defect, c.pairs)))
    };
    let fd = |res: Result<FdCheck>| {
        res.map(|c| (c.passed(), {
            let errors: Vec<_> = c.errors.iter().map(|e| format!("{e:.3e}")).collect();
            format!("errors [{}], orders {:.3?}", errors.join(", "), c.orders)
        }))
    };
    match group {
        CheckGroup::Adjoint => vec![
            outcome(group, "elliptic adjoint identity", adjoint(adjoint_identity_elliptic(8, 16, 20, 1))),
            outcome(group, "parabolic adjoint identity", adjoint(adjoint_identity_parabolic(8, 16, 16, 20, 2))),
        ],
        CheckGroup::Derivative => [ExampleId::E51, ExampleId::E53]
            .into_iter()
            .map(|id| {
                let name = format!("finite-difference derivative, example {id}");
                let nt = if id.kind() == ProblemKind::Parabolic { 16 } else { 1 };
                outcome(group, &name, fd(derivative_fd(id, 8, 16, nt, &FD_STEPS)))
            })
            .collect(),
        CheckGroup::Oracle => vec![outcome(
            group,
            "dense Gauss-Newton oracle",
            oracle_battery(5, 5, 3).map(|reports| {
                let failures = reports.iter().filter(|r| !oracle_ordering_holds(r)).count();
                (failures == 0, format!("{} of {} comparisons ordered", reports.len() - failures, reports.len()))
            }),
        )],
        CheckGroup::Fem => vec![
            outcome(
                group,
                "elliptic L2 convergence",
                fem_convergence_elliptic().map(|c| {
                    (c.ratio() >= ELLIPTIC_RATIO_MIN, format!("errors {:.3e} -> {:.3e}, ratio {:.3}", c.coarse, c.fine, c.ratio()))
                }),
            ),
            outcome(
                group,
                "parabolic L2 convergence",
                fem_convergence_parabolic().map(|c| {
                    (c.ratio() >= PARABOLIC_RATIO_MIN, format!("errors {:.3e} -> {:.3e}, ratio {:.3}", c.coarse, c.fine, c.ratio()))
                }),
            ),
        ],
    }
}

pub fn run_checks(groups: &[CheckGroup]) -> Vec<CheckOutcome> {
    groups.iter().flat_map(|&g| run_group(g)).collect()
}
