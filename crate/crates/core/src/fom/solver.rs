//! Backward Euler time stepping and trajectory generation.

use serde::{Deserialize, Serialize};

use super::band::{Band, BandLu};
use super::mesh::{assemble_operators, AdrSystem, Coefficients, MeshP1, Param};
use crate::error::{Error, Result};

/// Relative residual accepted from a linear solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Time discretization of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    /// Final time `T`.
    pub t_final: f64,
    /// Number of fine backward Euler steps over `[0, T]`.
    pub steps: usize,
    /// Coarse grid keeps every `stride`-th fine snapshot.
    pub stride: usize,
}

impl TimeConfig {
    pub fn full() -> Self {
        TimeConfig {
            t_final: 10.0 * std::f64::consts::PI,
            steps: 1000,
            stride: 5,
        }
    }

    pub fn desk() -> Self {
        TimeConfig {
            t_final: 2.0 * std::f64::consts::PI,
            steps: 100,
            stride: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || self.steps == 0 || self.stride == 0 || self.steps % self.stride != 0 {
            return Err(Error::invalid(format!("invalid time configuration {self:?}")));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn n_fine(&self) -> usize {
        self.steps + 1
    }

    pub fn n_coarse(&self) -> usize {
        self.steps / self.stride + 1
    }

    pub fn fine_time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn coarse_time(&self, k: usize) -> f64 {
        self.fine_time(k * self.stride)
    }

    /// Largest index on a grid of spacing `h` whose time does not exceed `t`.
    fn last_index(t: f64, h: f64, n: usize) -> usize {
        (((t / h) + 1e-9).floor() as usize).min(n - 1)
    }

    pub fn fine_index_at(&self, t: f64) -> usize {
        Self::last_index(t, self.dt(), self.n_fine())
    }

    pub fn coarse_index_at(&self, t: f64) -> usize {
        Self::last_index(t, self.dt() * self.stride as f64, self.n_coarse())
    }
}

/// One implicit step: solves `(M/Δt + A) u_{n+1} = (M/Δt) u_n + F`.
pub fn step_backward_euler(mass: &Band, a: &Band, load: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let s = Band::lin_comb(&[(1.0 / dt, mass), (1.0, a)]);
    let mut rhs = mass.matvec(u);
    for (r, f) in rhs.iter_mut().zip(load) {
        *r = *r / dt + f;
    }
    let lu = BandLu::factor(&s)?;
    let next = lu.solve(&rhs);
    let res = s.matvec(&next);
    let r_norm = res.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(r_norm <= SOLVE_TOL * b_norm) && r_norm != 0.0 {
        return Err(Error::numerical(
            "backward_euler",
            format!("linear residual {:e} relative to rhs norm {b_norm:e}", r_norm),
        ));
    }
    Ok(next)
}

/// Fine and coarse snapshots for one parameter (raw values, node order).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub mu: Param,
    pub time: TimeConfig,
    /// `n_fine × 1024`, row-major.
    pub fine: Vec<f64>,
    /// `n_coarse × 1024`, exactly `fine[stride * i]`.
    pub coarse: Vec<f64>,
}

impl Trajectory {
    pub fn n_nodes(&self) -> usize {
        self.fine.len() / self.time.n_fine()
    }

    pub fn fine_snapshot(&self, k: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.fine[k * n..(k + 1) * n]
    }

    pub fn coarse_snapshot(&self, k: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.coarse[k * n..(k + 1) * n]
    }
}

/// Integrates from `u = 0` with the given coefficients.
pub fn simulate_with(mesh: &MeshP1, coef: Coefficients, time: &TimeConfig, mu: Param) -> Result<Trajectory> {
    time.validate()?;
    let sys = AdrSystem::new(mesh, assemble_operators(mesh), coef);
    let n = mesh.n_nodes();
    let dt = time.dt();
    let mut fine = Vec::with_capacity(time.n_fine() * n);
    let mut u = vec![0.0; n];
    fine.extend_from_slice(&u);
    for k in 1..=time.steps {
        let a = sys.operator(time.fine_time(k));
        u = step_backward_euler(&sys.ops.mass, &a, &sys.load, &u, dt)
            .map_err(|e| annotate(e, mu, k))?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("simulate", format!("non-finite state at step {k} for {mu:?}")));
        }
        fine.extend_from_slice(&u);
    }
    let coarse = (0..time.n_coarse())
        .flat_map(|i| fine[i * time.stride * n..(i * time.stride + 1) * n].iter().copied())
        .collect();
    Ok(Trajectory { mu, time: *time, fine, coarse })
}

fn annotate(e: Error, mu: Param, k: usize) -> Error {
    match e {
        Error::Numerical { op, detail } => Error::Numerical {
            op,
            detail: format!("{detail} (step {k}, mu {mu:?})"),
        },
        other => other,
    }
}

/// Full-order trajectory of the physical problem for parameter `μ`.
pub fn simulate(mesh: &MeshP1, time: &TimeConfig, mu: Param) -> Result<Trajectory> {
    simulate_with(mesh, Coefficients::physical(&mu)?, time, mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_implicit_step() {
        // du/dt = -u as a 1×1 system: M = 1, A = 1.
        let mut m = Band::zeros(1, 0, 0);
        m.add(0, 0, 1.0);
        let a = m.clone();
        let dt = 0.1;
        let u1 = step_backward_euler(&m, &a, &[0.0], &[2.0], dt).unwrap();
        assert!((u1[0] - 2.0 / (1.0 + dt)).abs() < 1e-15);
    }

    #[test]
    fn time_grid_bookkeeping() {
        let t = TimeConfig::full();
        assert_eq!((t.n_fine(), t.n_coarse()), (1001, 201));
        assert_eq!(t.coarse_index_at(4.0 * std::f64::consts::PI), 80);
        assert_eq!(t.fine_index_at(5.0 * std::f64::consts::PI), 500);
        let d = TimeConfig::desk();
        assert_eq!((d.n_fine(), d.n_coarse()), (101, 21));
    }
}
