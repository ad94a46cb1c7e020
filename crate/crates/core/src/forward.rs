//! Backward-Euler time stepping of `u_t + L u = 0` and its exact discrete
//! adjoint in the mass inner product.
//!
//! One step maps `u` to `(M + dt K)^{-1} M u`. The adjoint of `F_t` with
//! respect to `<x, y>_M = x^T M y` is `M^{-1} (M (M + dt K)^{-T})^s M`, applied
//! here as its own sequence of operations rather than by reusing the forward
//! map.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::linalg::{conjugate_gradient, dot, BandedCholesky, CsrMatrix};
use crate::observe::SensorSet;
use crate::operators::EllipticOperator;

/// Interior node count up to which the step matrix is factorized.
pub const CHOLESKY_LIMIT: usize = 100_000;

/// Default time step.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSolverKind {
    /// Factorize `M + dt K` once when small enough, CG otherwise.
    #[default]
    Auto,
    Cholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone)]
enum StepSolver {
    Cholesky(BandedCholesky),
    Cg(CsrMatrix),
}

const STEP_CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ForwardConfig {
    op: Arc<EllipticOperator>,
    final_time: f64,
    dt: f64,
    steps: usize,
    solver: StepSolver,
}

impl ForwardConfig {
    pub fn new(op: Arc<EllipticOperator>, final_time: f64, dt: f64) -> Result<Self> {
        Self::with_solver(op, final_time, dt, StepSolverKind::Auto)
    }

    pub fn with_solver(
        op: Arc<EllipticOperator>,
        final_time: f64,
        dt: f64,
        kind: StepSolverKind,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {final_time}")));
        }
        let steps = steps_on_grid(final_time, dt)
            .ok_or(Error::TimeOffGrid { t: final_time, dt })?;
        let a = op.mass_matrix().linear_combination(1.0, op.stiffness(), dt);
        let use_cholesky = match kind {
            StepSolverKind::Auto => op.dim() <= CHOLESKY_LIMIT,
            StepSolverKind::Cholesky => true,
            StepSolverKind::ConjugateGradient => false,
        };
        let solver = if use_cholesky { StepSolver::Cholesky(BandedCholesky::factor(&a)?) } else { StepSolver::Cg(a) };
        Ok(Self { op, final_time, dt, steps, solver })
    }

    pub fn operator(&self) -> &EllipticOperator {
        &self.op
    }

    pub fn operator_arc(&self) -> Arc<EllipticOperator> {
        Arc::clone(&self.op)
    }

    pub fn grid(&self) -> &crate::grid::Grid {
        self.op.grid()
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Same operator and step size with a different final time.
    pub fn with_final_time(&self, final_time: f64) -> Result<Self> {
        let steps = steps_on_grid(final_time, self.dt).ok_or(Error::TimeOffGrid { t: final_time, dt: self.dt })?;
        if steps == 0 {
            return Err(Error::InvalidArgument("final time must be positive".into()));
        }
        Ok(Self { final_time, steps, ..self.clone() })
    }

    /// Number of steps reaching `t`; errors if `t` is outside `[0, T]` or
    /// off the step grid.
    pub fn steps_to(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.final_time * (1.0 + 1e-12)) {
            return Err(Error::TimeOutOfRange { t, final_time: self.final_time });
        }
        steps_on_grid(t, self.dt).ok_or(Error::TimeOffGrid { t, dt: self.dt })
    }

    fn solve_step(&self, rhs: &[f64], guess: &[f64]) -> Vec<f64> {
        match &self.solver {
            StepSolver::Cholesky(chol) => {
                let mut x = rhs.to_vec();
                chol.solve_in_place(&mut x);
                x
            }
            StepSolver::Cg(a) => {
                let mut x = guess.to_vec();
                conjugate_gradient(|v, out| a.mul_vec(v, out), dot, rhs, &mut x, STEP_CG_TOL, 10 * a.dim(), |_, _| {});
                x
            }
        }
    }

    fn solve_step_transpose(&self, rhs: &[f64], guess: &[f64]) -> Vec<f64> {
        match &self.solver {
            StepSolver::Cholesky(chol) => {
                let mut x = rhs.to_vec();
                chol.solve_transpose_in_place(&mut x);
                x
            }
            StepSolver::Cg(a) => {
                let mut x = guess.to_vec();
                conjugate_gradient(
                    |v, out| out.copy_from_slice(&a.mul_transpose(v)),
                    dot,
                    rhs,
                    &mut x,
                    STEP_CG_TOL,
                    10 * a.dim(),
                    |_, _| {},
                );
                x
            }
        }
    }

    /// Applies `steps` backward-Euler steps to interior values.
    pub fn propagate(&self, u: &[f64], steps: usize) -> Vec<f64> {
        let mut u = u.to_vec();
        for _ in 0..steps {
            let rhs = self.op.mass_apply(&u);
            u = self.solve_step(&rhs, &u);
        }
        u
    }

    /// `F_T` on interior values.
    pub fn forward_interior(&self, f: &[f64]) -> Vec<f64> {
        self.propagate(f, self.steps)
    }

    /// `F_T^*` on interior values, adjoint in the mass inner product.
    pub fn adjoint_interior(&self, g: &[f64]) -> Vec<f64> {
        let mut v = self.op.mass_apply(g);
        let mut guess = g.to_vec();
        for _ in 0..self.steps {
            let w = self.solve_step_transpose(&v, &guess);
            v = self.op.mass_apply(&w);
            guess = w;
        }
        self.op.mass_solve(&v)
    }

    /// `u(., t)` for initial data `f`; boundary values are zero.
    pub fn forward_solve(&self, f: &Field, t: f64) -> Result<Field> {
        self.check_grid(f)?;
        let steps = self.steps_to(t)?;
        Field::from_interior(self.grid(), &self.propagate(&f.interior_values(), steps))
    }

    /// `F_t f` at several times in one sweep; `times` need not be sorted.
    pub fn forward_at_times(&self, f: &Field, times: &[f64]) -> Result<Vec<Field>> {
        self.check_grid(f)?;
        let steps: Vec<usize> = times.iter().map(|&t| self.steps_to(t)).collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by_key(|&i| steps[i]);
        let mut out = vec![None; times.len()];
        let mut u = f.interior_values();
        let mut done = 0;
        for i in order {
            u = self.propagate(&u, steps[i] - done);
            done = steps[i];
            out[i] = Some(Field::from_interior(self.grid(), &u)?);
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    /// `F_T^* g`.
    pub fn adjoint_solve(&self, g: &Field) -> Result<Field> {
        self.check_grid(g)?;
        Field::from_interior(self.grid(), &self.adjoint_interior(&g.interior_values()))
    }

    /// `P_T^* r`: the field `z` with `(r, F_T v)_n = <z, v>_M` for all `v`.
    pub fn sensor_adjoint_interior(&self, sensors: &SensorSet, r: &[f64]) -> Result<Vec<f64>> {
        let scattered = sensors.scatter_weighted(self.grid(), r)?;
        Ok(self.adjoint_interior(&self.op.mass_solve(&scattered)))
    }

    pub fn sensor_adjoint(&self, sensors: &SensorSet, r: &[f64]) -> Result<Field> {
        Field::from_interior(self.grid(), &self.sensor_adjoint_interior(sensors, r)?)
    }

    fn check_grid(&self, f: &Field) -> Result<()> {
        if f.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// `t / dt` as an integer when it is one within `1e-9` relative tolerance.
fn steps_on_grid(t: f64, dt: f64) -> Option<usize> {
    let s = t / dt;
    let r = s.round();
    ((s - r).abs() <= 1e-9 * r.max(1.0) && r >= 0.0).then_some(r as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, Grid};
    use crate::operators::{assemble, partial_spectrum, Coefficients, MassKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn config(nodes: usize, t: f64, dt: f64, kind: MassKind) -> ForwardConfig {
        let g = Grid::uniform(2, 0.0, PI, nodes).unwrap();
        let op = assemble(&g, &Coefficients::constant(&g, 1.0, 0.0), kind).unwrap();
        ForwardConfig::new(Arc::new(op), t, dt).unwrap()
    }

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
        let v: Vec<f64> = (0..g.interior_count()).map(|_| rng.random::<f64>() - 0.5).collect();
        Field::from_interior(g, &v).unwrap()
    }

    #[test]
    fn zero_stays_zero_and_t0_is_identity() {
        let cfg = config(9, 0.1, 1e-3, MassKind::Lumped);
        let z = Field::zeros(cfg.grid());
        assert_eq!(cfg.forward_solve(&z, 0.05).unwrap(), z);
        let f = Field::from_fn(cfg.grid(), |p| 1.0 + p[0] * p[1]).unwrap();
        assert_eq!(cfg.forward_solve(&f, 0.0).unwrap(), f.clamp_boundary());
    }

    #[test]
    fn time_validation() {
        let cfg = config(9, 0.1, 1e-3, MassKind::Lumped);
        let f = Field::zeros(cfg.grid());
        assert!(matches!(cfg.forward_solve(&f, 0.2), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(cfg.forward_solve(&f, -0.01), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(cfg.forward_solve(&f, 0.0105), Err(Error::TimeOffGrid { .. })));
        let op = cfg.operator_arc();
        assert!(ForwardConfig::new(op.clone(), 0.1, 0.03).is_err());
        assert!(ForwardConfig::new(op, 0.1, 0.0).is_err());
    }

    #[test]
    fn semigroup_property() {
        let cfg = config(11, 0.1, 1e-3, MassKind::Lumped);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(cfg.grid(), &mut rng);
        let direct = cfg.forward_solve(&f, 0.05).unwrap();
        let split = cfg.forward_solve(&cfg.forward_solve(&f, 0.02).unwrap(), 0.03).unwrap();
        assert_eq!(direct, split);
    }

    #[test]
    fn contraction() {
        let cfg = config(11, 0.1, 1e-3, MassKind::Lumped);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let f = random_field(cfg.grid(), &mut rng);
            assert!(l2_norm(&cfg.forward_solve(&f, 0.1).unwrap()) <= l2_norm(&f));
        }
    }

    #[test]
    fn adjoint_identity_both_masses() {
        for kind in [MassKind::Lumped, MassKind::Consistent] {
            let cfg = config(9, 0.05, 1e-3, kind);
            let op = cfg.operator();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..5 {
                let u = random_field(cfg.grid(), &mut rng).interior_values();
                let g = random_field(cfg.grid(), &mut rng).interior_values();
                let lhs = op.mass_dot(&cfg.forward_interior(&u), &g);
                let rhs = op.mass_dot(&u, &cfg.adjoint_interior(&g));
                let scale = op.mass_norm(&u) * op.mass_norm(&g);
                assert!((lhs - rhs).abs() <= 1e-12 * scale, "{kind:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn adjoint_on_eigenvector_is_scaled() {
        let cfg = config(9, 0.05, 1e-3, MassKind::Lumped);
        let spec = partial_spectrum(cfg.operator(), 4).unwrap();
        for (mu, phi) in spec.eigenvalues.iter().zip(&spec.eigenvectors) {
            let factor = (1.0 + cfg.dt() * mu).powi(-(cfg.steps() as i32));
            let out = cfg.adjoint_solve(phi).unwrap();
            let diff = out.axpy(-factor, phi).unwrap();
            assert!(diff.max_abs() < 1e-12, "{}", diff.max_abs());
        }
        let z = Field::zeros(cfg.grid());
        assert_eq!(cfg.adjoint_solve(&z).unwrap(), z);
    }

    #[test]
    fn cg_step_solver_agrees_with_cholesky() {
        let chol = config(9, 0.02, 1e-3, MassKind::Lumped);
        let cg = ForwardConfig::with_solver(chol.operator_arc(), 0.02, 1e-3, StepSolverKind::ConjugateGradient).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_field(chol.grid(), &mut rng);
        let a = chol.forward_solve(&f, 0.02).unwrap();
        let b = cg.forward_solve(&f, 0.02).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn forward_at_times_matches_individual_solves() {
        let cfg = config(9, 0.05, 1e-3, MassKind::Lumped);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(cfg.grid(), &mut rng);
        let times = [0.03, 0.0, 0.05, 0.01];
        let all = cfg.forward_at_times(&f, &times).unwrap();
        for (t, u) in times.iter().zip(&all) {
            assert_eq!(u, &cfg.forward_solve(&f, *t).unwrap());
        }
    }
}
