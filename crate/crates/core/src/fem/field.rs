use crate::error::{Error, Result};
use crate::mesh::{Mesh, SegmentTag};

/// P1 coefficient vector indexed by mesh node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: mesh.nodes.iter().map(|&[x, y]| f(x, y)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Restriction to the nodes of one boundary segment.
    pub fn trace(&self, mesh: &Mesh, tag: SegmentTag) -> BoundaryField {
        BoundaryField {
            tag,
            values: mesh
                .segment(tag)
                .nodes
                .iter()
                .map(|&n| self.values[n])
                .collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &NodalField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Nodal function on the node set of one boundary segment, in the segment's
/// local numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    pub tag: SegmentTag,
    pub values: Vec<f64>,
}

impl BoundaryField {
    pub fn new(tag: SegmentTag, values: Vec<f64>) -> Self {
        Self { tag, values }
    }

    pub fn constant(mesh: &Mesh, tag: SegmentTag, value: f64) -> Self {
        Self {
            tag,
            values: vec![value; mesh.segment(tag).len()],
        }
    }

    pub fn zeros(mesh: &Mesh, tag: SegmentTag) -> Self {
        Self::constant(mesh, tag, 0.0)
    }

    pub fn interpolate(mesh: &Mesh, tag: SegmentTag, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            tag,
            values: mesh
                .segment(tag)
                .nodes
                .iter()
                .map(|&n| {
                    let [x, y] = mesh.nodes[n];
                    f(x, y)
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that the field is defined on `tag` with the right node count.
    pub fn check_on(&self, mesh: &Mesh, tag: SegmentTag) -> Result<()> {
        if self.tag != tag {
            return Err(Error::SegmentMismatch {
                expected: tag,
                got: self.tag,
            });
        }
        let expected = mesh.segment(tag).len();
        if self.values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            tag: self.tag,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same segment.
    pub fn zip_with(&self, other: &BoundaryField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.tag != other.tag {
            return Err(Error::SegmentMismatch {
                expected: self.tag,
                got: other.tag,
            });
        }
        if self.values.len() != other.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(Self {
            tag: self.tag,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Nodal product.
    pub fn mul(&self, other: &BoundaryField) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn sub(&self, other: &BoundaryField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &BoundaryField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
