//! Uniform P1 triangulation of the unit square and operator assembly.

use super::band::Band;
use crate::error::{Error, Result};

/// Lower corner of the admissible parameter box `P`.
pub const P_LO: [f64; 3] = [1e-2, 0.3, 0.3];
pub const P_HI: [f64; 3] = [6e-2, 0.7, 0.7];
/// Training box `P_train`.
pub const P_TRAIN_LO: [f64; 3] = [2e-2, 0.4, 0.4];
pub const P_TRAIN_HI: [f64; 3] = [5e-2, 0.6, 0.6];

pub const SOURCE_AMPLITUDE: f64 = 10.0;
pub const SOURCE_WIDTH: f64 = 0.072;
pub const REACTION: f64 = 1.0;

/// `(μ₁, μ₂, μ₃)`: diffusion and source center.
pub type Param = [f64; 3];

pub fn in_box(mu: &Param, lo: &[f64; 3], hi: &[f64; 3]) -> bool {
    (0..3).all(|i| mu[i] >= lo[i] && mu[i] <= hi[i])
}

pub fn check_param(mu: &Param) -> Result<()> {
    if mu.iter().all(|v| v.is_finite()) && in_box(mu, &P_LO, &P_HI) {
        Ok(())
    } else {
        Err(Error::invalid(format!("parameter {mu:?} outside the admissible box")))
    }
}

/// Uniform mesh of `n_sub × n_sub` squares, each split along the
/// lower-left to upper-right diagonal. Node `(i, j)` (x index `i`, y index
/// `j`) has id `j * (n_sub + 1) + i`, so nodal vectors reshape directly to
/// `[rows = y, cols = x]` images.
#[derive(Clone, Debug)]
pub struct MeshP1 {
    pub n_sub: usize,
    pub coords: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

impl MeshP1 {
    pub fn unit_square(n_sub: usize) -> Self {
        let side = n_sub + 1;
        let h = 1.0 / n_sub as f64;
        let mut coords = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                coords.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n_sub * n_sub);
        for j in 0..n_sub {
            for i in 0..n_sub {
                let a = j * side + i;
                let b = a + 1;
                let c = a + side + 1;
                let d = a + side;
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        MeshP1 {
            n_sub,
            coords,
            triangles,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    /// Half-bandwidth of every assembled operator under the node numbering.
    pub fn bandwidth(&self) -> usize {
        self.n_sub + 2
    }

    pub fn area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangles[t].map(|k| self.coords[k]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    /// Constant gradients of the three barycentric basis functions.
    fn gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p, q, r] = self.triangles[t].map(|k| self.coords[k]);
        let two_a = 2.0 * self.area(t);
        [
            [(q[1] - r[1]) / two_a, (r[0] - q[0]) / two_a],
            [(r[1] - p[1]) / two_a, (p[0] - r[0]) / two_a],
            [(p[1] - q[1]) / two_a, (q[0] - p[0]) / two_a],
        ]
    }
}

/// Time-independent pieces of the ADR operator.
#[derive(Clone, Debug)]
pub struct Operators {
    /// Consistent mass matrix.
    pub mass: Band,
    /// Stiffness matrix of the Laplacian.
    pub stiffness: Band,
    /// `∫ φ_i ∂φ_j/∂x` and `∫ φ_i ∂φ_j/∂y`.
    pub adv_x: Band,
    pub adv_y: Band,
}

pub fn assemble_operators(mesh: &MeshP1) -> Operators {
    let n = mesh.n_nodes();
    let bw = mesh.bandwidth();
    let mut mass = Band::zeros(n, bw, bw);
    let mut stiffness = Band::zeros(n, bw, bw);
    let mut adv_x = Band::zeros(n, bw, bw);
    let mut adv_y = Band::zeros(n, bw, bw);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.area(t);
        let g = mesh.gradients(t);
        for a in 0..3 {
            for b in 0..3 {
                let (i, j) = (tri[a], tri[b]);
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.add(i, j, m);
                stiffness.add(i, j, area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]));
                // ∫ φ_a over the element is area / 3
                adv_x.add(i, j, area / 3.0 * g[b][0]);
                adv_y.add(i, j, area / 3.0 * g[b][1]);
            }
        }
    }
    Operators {
        mass,
        stiffness,
        adv_x,
        adv_y,
    }
}

/// Coefficients of `∂u/∂t − κΔu + a·b(t)·∇u + c u = s·f`. The physical
/// problem has `κ = μ₁`, `a = 1`, `c = 1`, `s = 1`; other values exist for
/// sanity checks.
#[derive(Clone, Copy, Debug)]
pub struct Coefficients {
    pub diffusion: f64,
    pub advection: f64,
    pub reaction: f64,
    pub source: f64,
    pub center: [f64; 2],
}

impl Coefficients {
    pub fn physical(mu: &Param) -> Result<Self> {
        check_param(mu)?;
        Ok(Coefficients {
            diffusion: mu[0],
            advection: 1.0,
            reaction: REACTION,
            source: 1.0,
            center: [mu[1], mu[2]],
        })
    }
}

pub fn source(x: [f64; 2], center: [f64; 2]) -> f64 {
    let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
    SOURCE_AMPLITUDE * (-r2 / SOURCE_WIDTH).exp()
}

/// `b(t) = (cos t, sin t)`.
pub fn advection_field(t: f64) -> [f64; 2] {
    [t.cos(), t.sin()]
}

/// Assembled system for one parameter.
#[derive(Clone, Debug)]
pub struct AdrSystem {
    pub ops: Operators,
    pub coef: Coefficients,
    /// Load vector `F = M f_h` of the nodal interpolant of the source.
    pub load: Vec<f64>,
}

impl AdrSystem {
    pub fn new(mesh: &MeshP1, ops: Operators, coef: Coefficients) -> Self {
        let nodal: Vec<f64> = mesh
            .coords
            .iter()
            .map(|&x| coef.source * source(x, coef.center))
            .collect();
        let load = ops.mass.matvec(&nodal);
        AdrSystem { ops, coef, load }
    }

    /// `A(t) = κK + a(cos t Cx + sin t Cy) + cM`.
    pub fn operator(&self, t: f64) -> Band {
        let [bx, by] = advection_field(t);
        let a = self.coef.advection;
        Band::lin_comb(&[
            (self.coef.diffusion, &self.ops.stiffness),
            (a * bx, &self.ops.adv_x),
            (a * by, &self.ops.adv_y),
            (self.coef.reaction, &self.ops.mass),
        ])
    }
}

/// Mass matrix, operator at time `t`, and load vector for parameter `μ`.
pub fn assemble_system(mesh: &MeshP1, mu: &Param, t: f64) -> Result<(Band, Band, Vec<f64>)> {
    let sys = AdrSystem::new(mesh, assemble_operators(mesh), Coefficients::physical(mu)?);
    let a = sys.operator(t);
    Ok((sys.ops.mass, a, sys.load))
}
