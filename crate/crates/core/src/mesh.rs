//! Structured triangulation of a rectangle `(0, lx) x (0, ly)`.
//!
//! Nodes are numbered lexicographically by (row, column): node `(i, j)` with
//! column `i` in `0..=nx` and row `j` in `0..=ny` has id `j * (nx + 1) + i`.
//! Every cell is split along its lower-left to upper-right diagonal into two
//! counterclockwise triangles.
//!
//! The right side `x = lx` is the inaccessible segment; the other three sides
//! form the accessible segment.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which part of the boundary an edge belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentTag {
    /// Where the Robin coefficient lives; no measurements.
    Inaccessible,
    /// Where observations are taken.
    Accessible,
}

impl fmt::Display for SegmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentTag::Inaccessible => f.write_str("inaccessible"),
            SegmentTag::Accessible => f.write_str("accessible"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: SegmentTag,
}

/// The node set and edges of one boundary segment, in local numbering.
///
/// `nodes[k]` is the mesh id of local node `k`; `edges` index into `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub tag: SegmentTag,
    pub nodes: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub lengths: Vec<f64>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    inaccessible: Segment,
    accessible: Segment,
}

fn coordinate(k: usize, n: usize, l: f64) -> f64 {
    // exact endpoint so that segment membership tests are exact
    if k == n {
        l
    } else {
        l * k as f64 / n as f64
    }
}

/// Builds the structured mesh and tags its boundary.
pub fn build_rect_mesh(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh(format!(
            "cell counts must be positive, got nx = {nx}, ny = {ny}"
        )));
    }
    if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
        return Err(Error::InvalidMesh(format!(
            "side lengths must be positive and finite, got lx = {lx}, ly = {ly}"
        )));
    }

    let id = |i: usize, j: usize| j * (nx + 1) + i;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([coordinate(i, nx, lx), coordinate(j, ny, ly)]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([n00, n10, n11]);
            triangles.push([n00, n11, n01]);
        }
    }

    // Counterclockwise walk starting at the origin.
    let mut walk = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        walk.push([id(i, 0), id(i + 1, 0)]);
    }
    for j in 0..ny {
        walk.push([id(nx, j), id(nx, j + 1)]);
    }
    for i in (0..nx).rev() {
        walk.push([id(i + 1, ny), id(i, ny)]);
    }
    for j in (0..ny).rev() {
        walk.push([id(0, j + 1), id(0, j)]);
    }
    let boundary_edges = walk
        .into_iter()
        .map(|nodes| BoundaryEdge {
            nodes,
            tag: SegmentTag::Accessible,
        })
        .collect();

    let empty = |tag| Segment {
        tag,
        nodes: Vec::new(),
        edges: Vec::new(),
        lengths: Vec::new(),
    };
    let mesh = Mesh {
        nodes,
        triangles,
        boundary_edges,
        nx,
        ny,
        lx,
        ly,
        inaccessible: empty(SegmentTag::Inaccessible),
        accessible: empty(SegmentTag::Accessible),
    };
    Ok(classify_boundary(mesh))
}

/// Tags edges with both endpoints on `x = lx` as inaccessible and every other
/// boundary edge as accessible, then rebuilds the segment node sets.
pub fn classify_boundary(mut mesh: Mesh) -> Mesh {
    for edge in &mut mesh.boundary_edges {
        let on_right = edge.nodes.iter().all(|&n| mesh.nodes[n][0] == mesh.lx);
        edge.tag = if on_right {
            SegmentTag::Inaccessible
        } else {
            SegmentTag::Accessible
        };
    }
    mesh.inaccessible = collect_segment(&mesh, SegmentTag::Inaccessible);
    mesh.accessible = collect_segment(&mesh, SegmentTag::Accessible);
    mesh
}

fn collect_segment(mesh: &Mesh, tag: SegmentTag) -> Segment {
    let mut local = vec![usize::MAX; mesh.nodes.len()];
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut lengths = Vec::new();
    for edge in mesh.boundary_edges.iter().filter(|e| e.tag == tag) {
        let mut pair = [0; 2];
        for (slot, &n) in pair.iter_mut().zip(&edge.nodes) {
            if local[n] == usize::MAX {
                local[n] = nodes.len();
                nodes.push(n);
            }
            *slot = local[n];
        }
        let [p, q] = edge.nodes.map(|n| mesh.nodes[n]);
        lengths.push((q[0] - p[0]).hypot(q[1] - p[1]));
        edges.push(pair);
    }
    Segment {
        tag,
        nodes,
        edges,
        lengths,
    }
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn segment(&self, tag: SegmentTag) -> &Segment {
        match tag {
            SegmentTag::Inaccessible => &self.inaccessible,
            SegmentTag::Accessible => &self.accessible,
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Coordinates of the local nodes of a segment.
    pub fn segment_coords(&self, tag: SegmentTag) -> Vec<[f64; 2]> {
        self.segment(tag)
            .nodes
            .iter()
            .map(|&n| self.nodes[n])
            .collect()
    }

    /// Plain-text dump: `id x y` per node, `id n0 n1 n2` per triangle and
    /// `n0 n1 tag` per boundary edge, each block preceded by a `#` header.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# nodes {}", self.nodes.len())?;
        for (id, [x, y]) in self.nodes.iter().enumerate() {
            writeln!(w, "{id} {x:.17e} {y:.17e}")?;
        }
        writeln!(w, "# triangles {}", self.triangles.len())?;
        for (id, [a, b, c]) in self.triangles.iter().enumerate() {
            writeln!(w, "{id} {a} {b} {c}")?;
        }
        writeln!(w, "# boundary_edges {}", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(w, "{} {} {}", e.nodes[0], e.nodes[1], e.tag)?;
        }
        Ok(())
    }
}
