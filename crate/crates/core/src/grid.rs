//! Structured rectangular grids on `[a, b]` or `[a, b] x [c, d]`, nodal fields
//! and the discrete norms built on trapezoidal quadrature.
//!
//! Nodes are enumerated lexicographically by axis with the first axis
//! varying slowest: in 2D the node `(i, j)` has index `i * n_y + j`. CSV dumps
//! and every assembled operator follow this order.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the domain; the second coordinate is unused in 1D.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn coord(&self, i: usize) -> f64 {
        // Exact endpoints so boundary coordinates survive CSV round trips.
        if i + 1 == self.nodes {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    /// Builds a grid from `dim` axes. `bounds[k] = (lower, upper)`.
    pub fn new(dim: usize, bounds: &[(f64, f64)], nodes_per_axis: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if bounds.len() != dim || nodes_per_axis.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} bounds and node counts, got {} and {}",
                bounds.len(),
                nodes_per_axis.len()
            )));
        }
        let mut axes = Vec::with_capacity(dim);
        for (k, (&(lower, upper), &nodes)) in bounds.iter().zip(nodes_per_axis).enumerate() {
            if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: degenerate bounds [{lower}, {upper}]"
                )));
            }
            if nodes < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: need at least 3 nodes, got {nodes}"
                )));
            }
            axes.push(Axis { lower, upper, nodes });
        }
        Ok(Self { axes })
    }

    /// Square/interval grid with the same bounds and node count on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, nodes_per_axis: usize) -> Result<Self> {
        let bounds = vec![(lower, upper); dim];
        let nodes = vec![nodes_per_axis; dim];
        Self::new(dim, &bounds, &nodes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn interior_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes - 2).product()
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> f64 {
        self.axes.iter().map(Axis::length).product()
    }

    /// Multi-index of a node (second entry 0 in 1D).
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim() {
            1 => [idx, 0],
            _ => {
                let ny = self.axes[1].nodes;
                [idx / ny, idx % ny]
            }
        }
    }

    pub fn linear_index(&self, mi: [usize; 2]) -> usize {
        match self.dim() {
            1 => mi[0],
            _ => mi[0] * self.axes[1].nodes + mi[1],
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let mut p = [0.0; 2];
        for (k, a) in self.axes.iter().enumerate() {
            p[k] = a.coord(mi[k]);
        }
        p
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        self.axes
            .iter()
            .enumerate()
            .any(|(k, a)| mi[k] == 0 || mi[k] + 1 == a.nodes)
    }

    /// Full-grid index of the `k`-th interior node (interior nodes are also
    /// enumerated lexicographically).
    pub fn interior_to_node(&self, k: usize) -> usize {
        match self.dim() {
            1 => k + 1,
            _ => {
                let iy = self.axes[1].nodes - 2;
                self.linear_index([k / iy + 1, k % iy + 1])
            }
        }
    }

    pub fn node_to_interior(&self, idx: usize) -> Option<usize> {
        if self.is_boundary(idx) {
            return None;
        }
        let mi = self.multi_index(idx);
        Some(match self.dim() {
            1 => mi[0] - 1,
            _ => (mi[0] - 1) * (self.axes[1].nodes - 2) + (mi[1] - 1),
        })
    }

    /// Trapezoidal quadrature weight of a node.
    pub fn quadrature_weight(&self, idx: usize) -> f64 {
        let mi = self.multi_index(idx);
        self.axes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let h = a.spacing();
                if mi[k] == 0 || mi[k] + 1 == a.nodes {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// Index of the node at `p`, if `p` coincides with a node up to
    /// `1e-9` of the spacing.
    pub fn locate_node(&self, p: &[f64]) -> Option<usize> {
        let mut mi = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let h = a.spacing();
            let s = (p[k] - a.lower) / h;
            let r = s.round();
            if (s - r).abs() > 1e-9 || r < 0.0 || r as usize >= a.nodes {
                return None;
            }
            mi[k] = r as usize;
        }
        Some(self.linear_index(mi))
    }
}

/// Real values on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::LengthMismatch { expected: grid.node_count(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Field::new"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { values: vec![0.0; grid.node_count()], grid: grid.clone() }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = (0..grid.node_count()).map(|i| f(grid.point(i))).collect();
        Self::new(grid.clone(), values)
    }

    /// Field from interior values; boundary nodes are set to zero.
    pub fn from_interior(grid: &Grid, interior: &[f64]) -> Result<Self> {
        if interior.len() != grid.interior_count() {
            return Err(Error::LengthMismatch { expected: grid.interior_count(), got: interior.len() });
        }
        let mut values = vec![0.0; grid.node_count()];
        for (k, &v) in interior.iter().enumerate() {
            values[grid.interior_to_node(k)] = v;
        }
        Self::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interior_values(&self) -> Vec<f64> {
        (0..self.grid.interior_count())
            .map(|k| self.values[self.grid.interior_to_node(k)])
            .collect()
    }

    /// Copy with boundary nodes set to zero.
    pub fn clamp_boundary(&self) -> Self {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if self.grid.is_boundary(i) {
                *v = 0.0;
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|v| c * v).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Writes `x[,y],value` rows in node order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header = if self.grid.dim() == 1 { "x,value" } else { "x,y,value" };
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for (i, v) in self.values.iter().enumerate() {
            line.clear();
            let p = self.grid.point(i);
            for c in p.iter().take(self.grid.dim()) {
                write!(line, "{c},").unwrap();
            }
            write!(line, "{}", fmt_num(*v)).unwrap();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads a field written by [`Field::write_csv`]; rows must follow the
    /// node order of `grid`.
    pub fn read_csv<R: Read>(grid: &Grid, r: R) -> Result<Self> {
        let rows = read_numeric_csv(r, grid.dim() + 1)?;
        if rows.len() != grid.node_count() {
            return Err(Error::LengthMismatch { expected: grid.node_count(), got: rows.len() });
        }
        let mut values = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let p = grid.point(i);
            for k in 0..grid.dim() {
                let h = grid.axis(k).spacing();
                if (row[k] - p[k]).abs() > 1e-9 * h.max(1.0) {
                    return Err(Error::Parse(format!(
                        "row {}: coordinate {} does not match node {:?}",
                        i + 2,
                        row[k],
                        &p[..grid.dim()]
                    )));
                }
            }
            values.push(row[grid.dim()]);
        }
        Self::new(grid.clone(), values)
    }
}

/// Parses a CSV with one header line and `columns` numeric columns.
pub(crate) fn read_numeric_csv<R: Read>(r: R, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if row.len() != columns {
            return Err(Error::Parse(format!(
                "line {}: expected {columns} columns, got {}",
                lineno + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Trapezoidal approximation of the L2 norm.
/// Shortest round-trip decimal, in exponent form outside `[1e-5, 1e16)`.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !a.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn l2_norm(f: &Field) -> f64 {
    let g = f.grid();
    f.values()
        .iter()
        .enumerate()
        .map(|(i, v)| g.quadrature_weight(i) * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Discrete H1 seminorm from forward differences on every grid edge.
pub fn h1_seminorm_discrete(f: &Field) -> f64 {
    let g = f.grid();
    let v = f.values();
    let mut acc = 0.0;
    for axis in 0..g.dim() {
        let h = g.axis(axis).spacing();
        for i in 0..g.node_count() {
            let mi = g.multi_index(i);
            if mi[axis] + 1 == g.axis(axis).nodes {
                continue;
            }
            let mut mj = mi;
            mj[axis] += 1;
            let d = (v[g.linear_index(mj)] - v[i]) / h;
            // Edge weight: h along the edge, trapezoid across it.
            let mut w = h;
            for other in 0..g.dim() {
                if other == axis {
                    continue;
                }
                let a = g.axis(other);
                w *= if mi[other] == 0 || mi[other] + 1 == a.nodes { 0.5 * a.spacing() } else { a.spacing() };
            }
            acc += w * d * d;
        }
    }
    acc.sqrt()
}

/// Discrete H2 seminorm.
///
/// Pure second differences are taken at interior nodes; the mixed derivative
/// uses the compact four-point difference on each cell and is counted twice
/// (xy and yx). Both are weighted by the cell/node area.
pub fn h2_seminorm_discrete(f: &Field) -> f64 {
    let g = f.grid();
    let v = f.values();
    let h = g.spacing();
    let mut acc = 0.0;
    for i in 0..g.node_count() {
        if g.is_boundary(i) {
            continue;
        }
        let mi = g.multi_index(i);
        let w: f64 = h.iter().product();
        for axis in 0..g.dim() {
            let mut lo = mi;
            let mut hi = mi;
            lo[axis] -= 1;
            hi[axis] += 1;
            let d2 = (v[g.linear_index(hi)] - 2.0 * v[i] + v[g.linear_index(lo)]) / (h[axis] * h[axis]);
            acc += w * d2 * d2;
        }
    }
    if g.dim() == 2 {
        let (nx, ny) = (g.axis(0).nodes, g.axis(1).nodes);
        let w = h[0] * h[1];
        for ix in 0..nx - 1 {
            for iy in 0..ny - 1 {
                let a = v[g.linear_index([ix, iy])];
                let b = v[g.linear_index([ix + 1, iy])];
                let c = v[g.linear_index([ix, iy + 1])];
                let d = v[g.linear_index([ix + 1, iy + 1])];
                let dxy = (d - b - c + a) / (h[0] * h[1]);
                acc += 2.0 * w * dxy * dxy;
            }
        }
    }
    acc.sqrt()
}

/// Full discrete H2 norm: root-sum-square of the L2 norm and the H1 and H2
/// seminorms.
pub fn h2_norm_discrete(f: &Field) -> f64 {
    let l2 = l2_norm(f);
    let h1 = h1_seminorm_discrete(f);
    let h2 = h2_seminorm_discrete(f);
    (l2 * l2 + h1 * h1 + h2 * h2).sqrt()
}
