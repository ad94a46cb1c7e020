//! Linear finite-element discretization of `L u = -div(a grad u) + c u` with
//! zero Dirichlet data, its generalized eigenpairs, and the closed-form
//! spectrum on rectangles with constant coefficients.
//!
//! In 2D each grid cell is split into two triangles along the diagonal from
//! `(i, j)` to `(i + 1, j + 1)`. The diffusivity is averaged over the vertices
//! of each element. Only interior degrees of freedom are kept.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{dot, BandedCholesky, CsrMatrix};

/// Interior node count up to which eigenpairs are computed densely.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// Diffusivity at every grid node.
    pub a: Vec<f64>,
    /// Reaction coefficient at every grid node.
    pub c: Vec<f64>,
}

impl Coefficients {
    pub fn constant(grid: &Grid, a: f64, c: f64) -> Self {
        let n = grid.node_count();
        Self { a: vec![a; n], c: vec![c; n] }
    }

    pub fn from_fns(grid: &Grid, a: impl Fn([f64; 2]) -> f64, c: impl Fn([f64; 2]) -> f64) -> Self {
        let pts: Vec<_> = (0..grid.node_count()).map(|i| grid.point(i)).collect();
        Self { a: pts.iter().map(|&p| a(p)).collect(), c: pts.iter().map(|&p| c(p)).collect() }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.node_count();
        if self.a.len() != n || self.c.len() != n {
            return Err(Error::InvalidCoefficients(format!(
                "expected {n} nodal values, got a: {}, c: {}",
                self.a.len(),
                self.c.len()
            )));
        }
        if let Some(i) = self.a.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidCoefficients(format!("a = {} <= 0 at node {i}", self.a[i])));
        }
        if let Some(i) = self.c.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidCoefficients(format!("c = {} < 0 at node {i}", self.c[i])));
        }
        Ok(())
    }

    /// `(a, c)` when both coefficients are constant.
    pub fn as_constant(&self) -> Option<(f64, f64)> {
        let a0 = *self.a.first()?;
        let c0 = *self.c.first()?;
        let same = |v: &[f64], x: f64| v.iter().all(|&y| (y - x).abs() <= 1e-14 * x.abs().max(1.0));
        (same(&self.a, a0) && same(&self.c, c0)).then_some((a0, c0))
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.a.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    #[default]
    Lumped,
    Consistent,
}

#[derive(Debug, Clone)]
enum Mass {
    Lumped(Vec<f64>),
    Consistent { matrix: CsrMatrix, chol: BandedCholesky },
}

/// Stiffness (diffusion plus reaction) and mass matrices on interior nodes.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: Grid,
    coefficients: Coefficients,
    stiffness: CsrMatrix,
    mass: Mass,
}

/// Element-local stiffness contributions of a P1 triangle.
fn triangle_stiffness(p: [[f64; 2]; 3]) -> ([[f64; 3]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    let mut q = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        q[i] = [p[j][1] - p[k][1], p[k][0] - p[j][0]];
    }
    let mut ke = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ke[i][j] = (q[i][0] * q[j][0] + q[i][1] * q[j][1]) / (4.0 * area);
        }
    }
    (ke, area)
}

/// Assembles the interior stiffness and mass matrices.
pub fn assemble(grid: &Grid, coefficients: &Coefficients, mass_kind: MassKind) -> Result<EllipticOperator> {
    coefficients.validate(grid)?;
    let n = grid.interior_count();
    let mut kt: Vec<(usize, usize, f64)> = Vec::new();
    let mut mt: Vec<(usize, usize, f64)> = Vec::new();
    let mut lumped = vec![0.0; n];

    // Scatters an element's local matrices into the interior system.
    let mut scatter = |nodes: &[usize], ke: &[Vec<f64>], me: &[Vec<f64>], lump: &[f64]| {
        for (li, &gi) in nodes.iter().enumerate() {
            let Some(ii) = grid.node_to_interior(gi) else { continue };
            lumped[ii] += lump[li];
            for (lj, &gj) in nodes.iter().enumerate() {
                let Some(jj) = grid.node_to_interior(gj) else { continue };
                kt.push((ii, jj, ke[li][lj]));
                if me[li][lj] != 0.0 {
                    mt.push((ii, jj, me[li][lj]));
                }
            }
        }
    };

    match grid.dim() {
        1 => {
            let h = grid.axis(0).spacing();
            for e in 0..grid.axis(0).nodes - 1 {
                let nodes = [e, e + 1];
                let a_e = 0.5 * (coefficients.a[e] + coefficients.a[e + 1]);
                let c = [coefficients.c[e], coefficients.c[e + 1]];
                let k = a_e / h;
                // Reaction enters through the mass discretization.
                let (me, lump) = match mass_kind {
                    MassKind::Lumped => (vec![vec![0.0; 2]; 2], [0.5 * h, 0.5 * h]),
                    MassKind::Consistent => {
                        (vec![vec![h / 3.0, h / 6.0], vec![h / 6.0, h / 3.0]], [0.0, 0.0])
                    }
                };
                let mut ke = vec![vec![k, -k], vec![-k, k]];
                match mass_kind {
                    MassKind::Lumped => {
                        ke[0][0] += c[0] * 0.5 * h;
                        ke[1][1] += c[1] * 0.5 * h;
                    }
                    MassKind::Consistent => {
                        let c_e = 0.5 * (c[0] + c[1]);
                        for i in 0..2 {
                            for j in 0..2 {
                                ke[i][j] += c_e * me[i][j];
                            }
                        }
                    }
                }
                scatter(&nodes, &ke, &me, &lump);
            }
        }
        _ => {
            let (nx, ny) = (grid.axis(0).nodes, grid.axis(1).nodes);
            for ix in 0..nx - 1 {
                for iy in 0..ny - 1 {
                    let tris = [
                        [[ix, iy], [ix + 1, iy], [ix + 1, iy + 1]],
                        [[ix, iy], [ix + 1, iy + 1], [ix, iy + 1]],
                    ];
                    for tri in tris {
                        let nodes: Vec<usize> = tri.iter().map(|&mi| grid.linear_index(mi)).collect();
                        let pts = [grid.point(nodes[0]), grid.point(nodes[1]), grid.point(nodes[2])];
                        let (kl, area) = triangle_stiffness(pts);
                        let a_e = nodes.iter().map(|&g| coefficients.a[g]).sum::<f64>() / 3.0;
                        let mut ke: Vec<Vec<f64>> =
                            kl.iter().map(|row| row.iter().map(|v| a_e * v).collect()).collect();
                        let (me, lump) = match mass_kind {
                            MassKind::Lumped => (vec![vec![0.0; 3]; 3], [area / 3.0; 3]),
                            MassKind::Consistent => {
                                let me = (0..3)
                                    .map(|i| {
                                        (0..3).map(|j| if i == j { area / 6.0 } else { area / 12.0 }).collect()
                                    })
                                    .collect();
                                (me, [0.0; 3])
                            }
                        };
                        match mass_kind {
                            MassKind::Lumped => {
                                for (i, &g) in nodes.iter().enumerate() {
                                    ke[i][i] += coefficients.c[g] * area / 3.0;
                                }
                            }
                            MassKind::Consistent => {
                                let c_e = nodes.iter().map(|&g| coefficients.c[g]).sum::<f64>() / 3.0;
                                for i in 0..3 {
                                    for j in 0..3 {
                                        ke[i][j] += c_e * me[i][j];
                                    }
                                }
                            }
                        }
                        scatter(&nodes, &ke, &me, &lump);
                    }
                }
            }
        }
    }

    let stiffness = CsrMatrix::from_triplets(n, kt);
    let mass = match mass_kind {
        MassKind::Lumped => Mass::Lumped(lumped),
        MassKind::Consistent => {
            let matrix = CsrMatrix::from_triplets(n, mt);
            let chol = BandedCholesky::factor(&matrix)?;
            Mass::Consistent { matrix, chol }
        }
    };
    Ok(EllipticOperator { grid: grid.clone(), coefficients: coefficients.clone(), stiffness, mass })
}

impl EllipticOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn mass_kind(&self) -> MassKind {
        match self.mass {
            Mass::Lumped(_) => MassKind::Lumped,
            Mass::Consistent { .. } => MassKind::Consistent,
        }
    }

    /// Mass matrix in sparse form.
    pub fn mass_matrix(&self) -> CsrMatrix {
        match &self.mass {
            Mass::Lumped(d) => CsrMatrix::identity_scaled(d),
            Mass::Consistent { matrix, .. } => matrix.clone(),
        }
    }

    pub fn mass_apply(&self, x: &[f64]) -> Vec<f64> {
        match &self.mass {
            Mass::Lumped(d) => x.iter().zip(d).map(|(a, b)| a * b).collect(),
            Mass::Consistent { matrix, .. } => matrix.mul(x),
        }
    }

    /// `M^{-1} x`.
    pub fn mass_solve(&self, x: &[f64]) -> Vec<f64> {
        match &self.mass {
            Mass::Lumped(d) => x.iter().zip(d).map(|(a, b)| a / b).collect(),
            Mass::Consistent { chol, .. } => {
                let mut y = x.to_vec();
                chol.solve_in_place(&mut y);
                y
            }
        }
    }

    /// Discrete L2 inner product `x^T M y`.
    pub fn mass_dot(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.mass {
            Mass::Lumped(d) => x.iter().zip(y).zip(d).map(|((a, b), m)| a * b * m).sum(),
            Mass::Consistent { matrix, .. } => dot(&matrix.mul(x), y),
        }
    }

    pub fn mass_norm(&self, x: &[f64]) -> f64 {
        self.mass_dot(x, x).sqrt()
    }

    /// Discrete operator `M^{-1} K` applied to the interior values of `f`.
    pub fn apply(&self, f: &Field) -> Result<Field> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let kx = self.stiffness.mul(&f.interior_values());
        Field::from_interior(&self.grid, &self.mass_solve(&kx))
    }

    /// `x^T K x / x^T M x`.
    pub fn rayleigh_quotient(&self, x: &[f64]) -> f64 {
        dot(&self.stiffness.mul(x), x) / self.mass_dot(x, x)
    }
}

/// Smallest generalized eigenpairs of `(K, M)`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as fields (zero on the boundary), orthonormal in the
    /// mass inner product.
    pub eigenvectors: Vec<Field>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Writes `k,mu_k,exp(-mu_k*T)` rows, `k` starting at 1.
    pub fn write_csv<W: Write>(&self, mut w: W, final_time: f64) -> Result<()> {
        writeln!(w, "k,mu_k,exp(-mu_k*T)")?;
        for (k, mu) in self.eigenvalues.iter().enumerate() {
            writeln!(w, "{},{},{}", k + 1, mu, (-mu * final_time).exp())?;
        }
        Ok(())
    }
}

/// The `k` smallest generalized eigenpairs, sorted ascending.
///
/// Dense symmetric eigensolve for up to [`DENSE_EIGEN_LIMIT`] interior nodes,
/// shift-invert block subspace iteration otherwise.
pub fn partial_spectrum(op: &EllipticOperator, k: usize) -> Result<Spectrum> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::Spectrum(format!("requested {k} modes, operator has {n} unknowns")));
    }
    let (values, vectors) =
        if n <= DENSE_EIGEN_LIMIT { dense_eigenpairs(op, k)? } else { subspace_iteration(op, k)? };
    let eigenvectors = vectors
        .iter()
        .map(|v| Field::from_interior(op.grid(), v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum { eigenvalues: values, eigenvectors })
}

fn dense_eigenpairs(op: &EllipticOperator, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = op.dim();
    let kd = op.stiffness.to_dense();
    let md = op.mass_matrix().to_dense();
    let chol = md
        .cholesky()
        .ok_or_else(|| Error::Spectrum("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // C = L^{-1} K L^{-T}
    let linv_k = l
        .solve_lower_triangular(&kd)
        .ok_or_else(|| Error::Spectrum("singular mass factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or_else(|| Error::Spectrum("singular mass factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        values.push(eig.eigenvalues[i]);
        let y = eig.eigenvectors.column(i).into_owned();
        let x = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Spectrum("singular mass factor".into()))?;
        let mut x: Vec<f64> = x.iter().copied().collect();
        normalize_sign(&mut x);
        vectors.push(x);
    }
    Ok((values, vectors))
}

/// Fixes the sign so the entry of largest magnitude is positive.
fn normalize_sign(x: &mut [f64]) {
    let (mut best, mut idx) = (0.0_f64, 0);
    for (i, v) in x.iter().enumerate() {
        if v.abs() > best + 1e-12 {
            best = v.abs();
            idx = i;
        }
    }
    if x[idx] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Shift-invert (zero shift) block subspace iteration with Rayleigh-Ritz.
fn subspace_iteration(op: &EllipticOperator, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    const MAX_ITER: usize = 500;
    const TOL: f64 = 1e-9;
    let n = op.dim();
    let block = (k + 8).max(2 * k).min(n);
    let chol = BandedCholesky::factor(&op.stiffness)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Vec<f64>> =
        (0..block).map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).collect();

    for _ in 0..MAX_ITER {
        for v in basis.iter_mut() {
            let mut w = op.mass_apply(v);
            chol.solve_in_place(&mut w);
            *v = w;
        }
        m_orthonormalize(op, &mut basis)?;
        // Rayleigh-Ritz on span(basis): K-projection with M-orthonormal basis.
        let kv: Vec<Vec<f64>> = basis.iter().map(|v| op.stiffness.mul(v)).collect();
        let b = basis.len();
        let mut proj = DMatrix::zeros(b, b);
        for i in 0..b {
            for j in 0..=i {
                let v = dot(&basis[i], &kv[j]);
                proj[(i, j)] = v;
                proj[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(proj);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let ritz: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let mut x = vec![0.0; n];
                for (r, v) in basis.iter().enumerate() {
                    let s = eig.eigenvectors[(r, c)];
                    x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += s * vi);
                }
                x
            })
            .collect();
        let values: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        let converged = (0..k).all(|i| {
            let kx = op.stiffness.mul(&ritz[i]);
            let mx = op.mass_apply(&ritz[i]);
            let r: f64 = kx.iter().zip(&mx).map(|(a, b)| (a - values[i] * b).powi(2)).sum::<f64>().sqrt();
            r <= TOL * dot(&kx, &kx).sqrt()
        });
        basis = ritz;
        if converged {
            let mut vectors: Vec<Vec<f64>> = basis.into_iter().take(k).collect();
            vectors.iter_mut().for_each(|v| normalize_sign(v));
            return Ok((values.into_iter().take(k).collect(), vectors));
        }
    }
    Err(Error::Spectrum(format!("subspace iteration did not converge in {MAX_ITER} sweeps")))
}

fn m_orthonormalize(op: &EllipticOperator, basis: &mut [Vec<f64>]) -> Result<()> {
    for i in 0..basis.len() {
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = basis.split_at_mut(i);
                let c = op.mass_dot(&tail[0], &head[j]);
                tail[0].iter_mut().zip(&head[j]).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = op.mass_norm(&basis[i]);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Spectrum("subspace basis lost rank".into()));
        }
        basis[i].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(())
}

/// One separable mode of the continuous operator on a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticMode {
    /// Wave numbers per axis (second entry 0 in 1D).
    pub wave_numbers: [usize; 2],
    pub mu: f64,
    /// Forward-operator eigenvalue `exp(-mu T)`.
    pub decay: f64,
}

/// The `k` smallest eigenvalues of the continuous operator with constant
/// coefficients on the grid's rectangle, `mu = a * sum (j pi / L)^2 + c`.
pub fn analytic_spectrum(
    grid: &Grid,
    coefficients: &Coefficients,
    final_time: f64,
    k: usize,
) -> Result<Vec<AnalyticMode>> {
    let (a, c) = coefficients.as_constant().ok_or_else(|| {
        Error::InvalidCoefficients("closed-form spectrum needs constant coefficients".into())
    })?;
    let lengths: Vec<f64> = grid.axes().iter().map(|ax| ax.length()).collect();
    let mut modes = Vec::new();
    let jmax = k.max(1);
    let jy_max = if grid.dim() == 2 { jmax } else { 1 };
    for jx in 1..=jmax {
        for jy in 1..=jy_max {
            let mut mu = (jx as f64 * std::f64::consts::PI / lengths[0]).powi(2);
            if grid.dim() == 2 {
                mu += (jy as f64 * std::f64::consts::PI / lengths[1]).powi(2);
            }
            let mu = a * mu + c;
            let wave_numbers = if grid.dim() == 2 { [jx, jy] } else { [jx, 0] };
            modes.push(AnalyticMode { wave_numbers, mu, decay: (-mu * final_time).exp() });
        }
    }
    modes.sort_by(|x, y| x.mu.total_cmp(&y.mu).then(x.wave_numbers.cmp(&y.wave_numbers)));
    modes.truncate(k);
    Ok(modes)
}
