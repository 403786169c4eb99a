//! P1 finite elements on the structured mesh: assembly of stiffness, mass,
//! boundary mass and load vectors, boundary inner products, and the SPD
//! solver every PDE solve goes through.
//!
//! Quadrature: element-centroid evaluation of the diffusion coefficient,
//! the three-point edge-midpoint rule on triangles (exact for quadratics) and
//! two-point Gauss on boundary edges (exact for cubics).

mod field;
mod sparse;

use std::fmt;
use std::sync::Arc;

pub use field::{BoundaryField, NodalField};
pub use sparse::{conjugate_gradient, solve_spd, CgReport, SolverConfig, SparseMatrix, SparsityPattern};
#[cfg(test)]
pub(crate) use sparse::dot;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, SegmentTag};

pub type SpaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A spatially varying or constant PDE coefficient.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Function(SpaceFn),
}

impl Coefficient {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Function(Arc::new(f))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Function(f) => f(x, y),
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Weight or source data on a boundary segment.
#[derive(Clone, Copy)]
pub enum BoundarySource<'a> {
    Constant(f64),
    /// Linearly interpolated along each edge.
    Nodal(&'a BoundaryField),
    Function(&'a dyn Fn(f64, f64) -> f64),
}

const GAUSS_2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

/// Calls `visit(a, b, s, weight * length, value)` for every Gauss
/// point of every edge of the segment, where `a`, `b` are local node indices,
/// `s` is the position along the edge and `value` is the source evaluated
/// there.
fn for_each_boundary_point(
    mesh: &Mesh,
    tag: SegmentTag,
    source: BoundarySource<'_>,
    mut visit: impl FnMut(usize, usize, f64, f64, f64),
) -> Result<()> {
    if let BoundarySource::Nodal(field) = source {
        field.check_on(mesh, tag)?;
    }
    let seg = mesh.segment(tag);
    for (&[a, b], &len) in seg.edges.iter().zip(&seg.lengths) {
        let pa = mesh.nodes[seg.nodes[a]];
        let pb = mesh.nodes[seg.nodes[b]];
        for &(s, w) in &GAUSS_2 {
            let value = match source {
                BoundarySource::Constant(c) => c,
                BoundarySource::Nodal(field) => (1.0 - s) * field.values[a] + s * field.values[b],
                BoundarySource::Function(f) => {
                    f(pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1]))
                }
            };
            visit(a, b, s, w * len, value);
        }
    }
    Ok(())
}

fn mesh_pattern(mesh: &Mesh) -> Arc<SparsityPattern> {
    let entries = mesh
        .triangles
        .iter()
        .flat_map(|t| t.iter().flat_map(move |&i| t.iter().map(move |&j| (i, j))));
    Arc::new(SparsityPattern::from_entries(mesh.num_nodes(), entries))
}

/// Zero matrix with the node-adjacency pattern of `mesh`.
pub fn empty_matrix(mesh: &Mesh) -> SparseMatrix {
    SparseMatrix::zeros(mesh_pattern(mesh))
}

fn add_element(m: &mut SparseMatrix, nodes: &[usize; 3], local: &[[f64; 3]; 3]) {
    for k in 0..3 {
        m.add_to(nodes[k], nodes[k], local[k][k]);
        for l in k + 1..3 {
            m.add_to(nodes[k], nodes[l], local[k][l]);
            m.add_to(nodes[l], nodes[k], local[k][l]);
        }
    }
}

fn edge_midpoints(p: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    // midpoint q is opposite vertex q
    let mid = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    [mid(p[1], p[2]), mid(p[2], p[0]), mid(p[0], p[1])]
}

/// Value of basis function `k` at the midpoint opposite vertex `q`.
fn basis_at_midpoint(k: usize, q: usize) -> f64 {
    if k == q {
        0.0
    } else {
        0.5
    }
}

/// `K_ij = ∫ a ∇φ_i·∇φ_j`, with `a` sampled at element centroids.
pub fn assemble_stiffness(mesh: &Mesh, a: &Coefficient) -> Result<SparseMatrix> {
    let mut m = empty_matrix(mesh);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|n| mesh.nodes[n]);
        let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
        let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
        let value = a.eval(cx, cy);
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidCoefficient {
                name: "a",
                requirement: "positive and finite",
                value,
                x: cx,
                y: cy,
            });
        }
        let area = mesh.triangle_area(t);
        let bx: [f64; 3] = std::array::from_fn(|k| p[(k + 1) % 3][1] - p[(k + 2) % 3][1]);
        let by: [f64; 3] = std::array::from_fn(|k| p[(k + 2) % 3][0] - p[(k + 1) % 3][0]);
        let mut local = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in k..3 {
                local[k][l] = value * ((bx[k] * bx[l] + by[k] * by[l]) / (4.0 * area));
            }
        }
        add_element(&mut m, tri, &local);
    }
    Ok(m)
}

/// `M_ij = ∫ c φ_i φ_j` by the edge-midpoint rule.
pub fn assemble_mass(mesh: &Mesh, c: &Coefficient) -> Result<SparseMatrix> {
    let mut m = empty_matrix(mesh);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|n| mesh.nodes[n]);
        let w = mesh.triangle_area(t) / 3.0;
        let mut local = [[0.0; 3]; 3];
        for (q, &[x, y]) in edge_midpoints(&p).iter().enumerate() {
            let value = c.eval(x, y);
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidCoefficient {
                    name: "c",
                    requirement: "non-negative and finite",
                    value,
                    x,
                    y,
                });
            }
            for k in 0..3 {
                for l in k..3 {
                    local[k][l] += value * (w * basis_at_midpoint(k, q) * basis_at_midpoint(l, q));
                }
            }
        }
        add_element(&mut m, tri, &local);
    }
    Ok(m)
}

/// `B_ij = ∫_segment weight φ_i φ_j ds`.
pub fn assemble_boundary_mass(
    mesh: &Mesh,
    tag: SegmentTag,
    weight: BoundarySource<'_>,
) -> Result<SparseMatrix> {
    let seg = mesh.segment(tag);
    let mut m = empty_matrix(mesh);
    let mut bad = None;
    for_each_boundary_point(mesh, tag, weight, |a, b, s, w, value| {
        if !value.is_finite() {
            bad.get_or_insert(value);
        }
        let phi = [1.0 - s, s];
        let nodes = [seg.nodes[a], seg.nodes[b]];
        for k in 0..2 {
            m.add_to(nodes[k], nodes[k], value * (w * phi[k] * phi[k]));
        }
        let off = value * (w * phi[0] * phi[1]);
        m.add_to(nodes[0], nodes[1], off);
        m.add_to(nodes[1], nodes[0], off);
    })?;
    if let Some(value) = bad {
        return Err(Error::InvalidCoefficient {
            name: "boundary weight",
            requirement: "finite",
            value,
            x: f64::NAN,
            y: f64::NAN,
        });
    }
    Ok(m)
}

/// `F_i = ∫ f φ_i dx` by the edge-midpoint rule.
pub fn assemble_load(mesh: &Mesh, f: &dyn Fn(f64, f64) -> f64) -> NodalField {
    let mut out = NodalField::zeros(mesh.num_nodes());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|n| mesh.nodes[n]);
        let w = mesh.triangle_area(t) / 3.0;
        for (q, &[x, y]) in edge_midpoints(&p).iter().enumerate() {
            let value = w * f(x, y);
            for (k, &node) in tri.iter().enumerate() {
                out.values[node] += value * basis_at_midpoint(k, q);
            }
        }
    }
    out
}

/// `G_i = ∫_segment g φ_i ds`.
pub fn assemble_boundary_load(
    mesh: &Mesh,
    tag: SegmentTag,
    g: BoundarySource<'_>,
) -> Result<NodalField> {
    let seg = mesh.segment(tag);
    let mut out = NodalField::zeros(mesh.num_nodes());
    for_each_boundary_point(mesh, tag, g, |a, b, s, w, value| {
        out.values[seg.nodes[a]] += w * value * (1.0 - s);
        out.values[seg.nodes[b]] += w * value * s;
    })?;
    Ok(out)
}

/// `G_i = ∫_segment a b φ_i ds` with both factors interpolated linearly,
/// i.e. `B_a b` for the boundary mass matrix weighted by `a`.
pub fn assemble_product_load(
    mesh: &Mesh,
    tag: SegmentTag,
    a: &BoundaryField,
    b: &BoundaryField,
) -> Result<NodalField> {
    b.check_on(mesh, tag)?;
    let seg = mesh.segment(tag);
    let mut out = NodalField::zeros(mesh.num_nodes());
    for_each_boundary_point(mesh, tag, BoundarySource::Nodal(a), |i, j, s, w, a_val| {
        let value = w * a_val * ((1.0 - s) * b.values[i] + s * b.values[j]);
        out.values[seg.nodes[i]] += value * (1.0 - s);
        out.values[seg.nodes[j]] += value * s;
    })?;
    Ok(out)
}

/// `∫_segment a b c ds` with all three fields interpolated linearly.
pub fn boundary_triple(
    mesh: &Mesh,
    tag: SegmentTag,
    a: &BoundaryField,
    b: &BoundaryField,
    c: &BoundaryField,
) -> Result<f64> {
    b.check_on(mesh, tag)?;
    c.check_on(mesh, tag)?;
    let mut acc = 0.0;
    for_each_boundary_point(mesh, tag, BoundarySource::Nodal(a), |i, j, s, w, a_val| {
        let lerp = |f: &BoundaryField| (1.0 - s) * f.values[i] + s * f.values[j];
        acc += w * a_val * lerp(b) * lerp(c);
    })?;
    Ok(acc)
}

/// `∫_segment u v ds` with both fields interpolated linearly along edges.
pub fn boundary_inner(mesh: &Mesh, tag: SegmentTag, u: &BoundaryField, v: &BoundaryField) -> Result<f64> {
    u.check_on(mesh, tag)?;
    v.check_on(mesh, tag)?;
    let mut acc = 0.0;
    for_each_boundary_point(mesh, tag, BoundarySource::Constant(1.0), |a, b, s, w, _| {
        let ui = (1.0 - s) * u.values[a] + s * u.values[b];
        let vi = (1.0 - s) * v.values[a] + s * v.values[b];
        acc += w * ui * vi;
    })?;
    Ok(acc)
}

pub fn boundary_norm(mesh: &Mesh, tag: SegmentTag, u: &BoundaryField) -> Result<f64> {
    Ok(boundary_inner(mesh, tag, u, u)?.sqrt())
}

/// Barycentric points and weights of a six-point rule exact for quartics.
const QUARTIC_RULE: [([f64; 3], f64); 6] = [
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
];

/// `‖u_h − u‖_{L²(Ω)}` for a P1 field against a reference function.
pub fn l2_error(mesh: &Mesh, uh: &NodalField, exact: &dyn Fn(f64, f64) -> f64) -> Result<f64> {
    if uh.len() != mesh.num_nodes() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_nodes(),
            got: uh.len(),
        });
    }
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_area(t);
        for (bary, w) in QUARTIC_RULE {
            let (mut x, mut y, mut v) = (0.0, 0.0, 0.0);
            for (k, &node) in tri.iter().enumerate() {
                x += bary[k] * mesh.nodes[node][0];
                y += bary[k] * mesh.nodes[node][1];
                v += bary[k] * uh.values[node];
            }
            acc += area * w * (v - exact(x, y)).powi(2);
        }
    }
    Ok(acc.sqrt())
}
