//! First Laplace eigenvalue of warped metrics and the backward biharmonic
//! heat flow along a stored trajectory.
//!
//! Functions are separated as `f(s)·Y(σ)` with `Y` a fiber eigenfunction;
//! mode `k = 0` is constant on the fiber, mode `k = 1` carries `μ₁`. The
//! lateral operator is a finite-volume discretization: lumped cell masses
//! `M = ∫_cell φψ² Vol(g_Σ) dx`, edge conductances `ψ²/(φ h)` at cell faces,
//! and for `k = 1` the fiber potential `μ₁ ∫_cell φ Vol(g_Σ) dx`. On a sphere
//! the pole nodes are not unknowns: mode 0 has no flux through a pole and
//! mode 1 vanishes there.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::flow::{displaced, FlowTrajectory, TangentField};
use crate::geometry::{arclength, Topology, WarpedMetric, DEFAULT_PSI_FLOOR};
use crate::interp::hermite;
use crate::linalg::{cyclic, thomas};
use crate::stencil::{phi_node, psi_node};

/// Lateral profile of a separated function `f(s)·Y_k(σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarProfile {
    /// One value per node of the metric's grid.
    pub values: Vec<f64>,
    /// Fiber mode, 0 or 1.
    pub fiber_mode: u8,
}

impl ScalarProfile {
    pub fn new(values: Vec<f64>, fiber_mode: u8) -> Self {
        ScalarProfile { values, fiber_mode }
    }

    /// Sample `f` at the arclength of every node.
    pub fn from_arclength(m: &WarpedMetric, fiber_mode: u8, f: impl Fn(f64) -> f64) -> Self {
        let s = arclength(m).s;
        ScalarProfile::new(s.iter().map(|&s| f(s)).collect(), fiber_mode)
    }
}

fn mode_mu(m: &WarpedMetric, mode: u8) -> Result<f64> {
    match mode {
        0 => Ok(0.0),
        1 => Ok(m.fiber().fiber_mu1),
        _ => Err(Error::ShapeMismatch("only fiber modes 0 and 1 are supported")),
    }
}

/// Value of `v` at the face between nodes `i` and `i + 1`, by four-point
/// interpolation with the ghost extension (odd for ψ, even for φ).
fn face(v: &[f64], i: usize, periodic: bool, odd: bool) -> f64 {
    let n = v.len();
    let at = |j: isize| -> f64 {
        if odd {
            let (k, sign) = psi_node(j, n, periodic);
            sign * v[k]
        } else {
            v[phi_node(j, n, periodic)]
        }
    };
    let i = i as isize;
    (9.0 * (at(i) + at(i + 1)) - (at(i - 1) + at(i + 2))) / 16.0
}

/// `∫ v dx` over the cell `[x_i − h/2, x_i + h/2]` for an even-extended `v`.
fn cell(v: &[f64], i: usize, periodic: bool, h: f64) -> f64 {
    let n = v.len();
    let l = v[phi_node(i as isize - 1, n, periodic)];
    let r = v[phi_node(i as isize + 1, n, periodic)];
    h * (v[i] + (l - 2.0 * v[i] + r) / 24.0)
}

/// `∫ v dx` over the half cell between a pole and the adjacent face.
fn pole_half_cell(v: &[f64], pole: usize, inner: usize, h: f64) -> f64 {
    0.5 * h * v[pole] + h * (v[inner] - v[pole]) / 24.0
}

/// The discrete operator of one fiber mode: `A = K + μP` (the positive
/// Dirichlet form) and the mass `M`, on the unknown nodes.
#[derive(Clone, Debug)]
struct Operator {
    nodes: Vec<usize>,
    mass: Vec<f64>,
    pot: Vec<f64>,
    mu: f64,
    /// `edge[u]` couples unknowns `u` and `u + 1` (cyclically on a circle).
    edge: Vec<f64>,
    /// Conductances to the pinned pole values (mode 1 on a sphere).
    wall: [f64; 2],
    periodic: bool,
}

/// Nodal ingredients of the operator, shared by the operator itself and
/// its rate of change along a tangent field.
struct Layout {
    nodes: Vec<usize>,
    periodic: bool,
    poles_in_cells: bool,
    dirichlet: bool,
}

fn layout(m: &WarpedMetric, mode: u8) -> Layout {
    let n = m.len();
    match m.topology() {
        Topology::CircleProduct => Layout {
            nodes: (0..n).collect(),
            periodic: true,
            poles_in_cells: false,
            dirichlet: false,
        },
        Topology::SphereSO3 => Layout {
            nodes: (1..n - 1).collect(),
            periodic: false,
            poles_in_cells: mode == 0,
            dirichlet: mode != 0,
        },
    }
}

/// Cell integrals of `v` over the unknowns' cells.
fn cells(m: &WarpedMetric, lay: &Layout, v: &[f64]) -> Vec<f64> {
    let h = m.spacing();
    let n = m.len();
    let mut out: Vec<f64> = lay.nodes.iter().map(|&i| cell(v, i, lay.periodic, h)).collect();
    if lay.poles_in_cells {
        let k = out.len();
        out[0] += pole_half_cell(v, 0, 1, h);
        out[k - 1] += pole_half_cell(v, n - 1, n - 2, h);
    }
    out
}

/// Conductance of every face `i ↔ i+1` of the full grid, and its rate
/// along `(dphi, dpsi)` when given.
fn faces(m: &WarpedMetric, rate: Option<&TangentField>) -> Vec<f64> {
    let n = m.len();
    let periodic = m.is_periodic();
    let count = if periodic { n } else { n - 1 };
    let fa = m.fiber().fiber_area;
    let h = m.spacing();
    (0..count)
        .map(|i| {
            let p = face(m.psi(), i, periodic, true);
            let q = face(m.phi(), i, periodic, false);
            match rate {
                None => fa * p * p / (q * h),
                Some(e) => {
                    let dp = face(&e.dpsi, i, periodic, true);
                    let dq = face(&e.dphi, i, periodic, false);
                    fa * (2.0 * p * dp / q - p * p * dq / (q * q)) / h
                }
            }
        })
        .collect()
}

fn assemble(m: &WarpedMetric, mode: u8, rate: Option<&TangentField>) -> Result<Operator> {
    let mu = mode_mu(m, mode)?;
    let lay = layout(m, mode);
    let n = m.len();
    let fa = m.fiber().fiber_area;
    let (phi, psi) = (m.phi(), m.psi());
    let (density, lateral): (Vec<f64>, Vec<f64>) = match rate {
        None => ((0..n).map(|i| phi[i] * psi[i] * psi[i]).collect(), phi.to_vec()),
        Some(e) => (
            (0..n)
                .map(|i| e.dphi[i] * psi[i] * psi[i] + 2.0 * phi[i] * psi[i] * e.dpsi[i])
                .collect(),
            e.dphi.clone(),
        ),
    };
    let mass: Vec<f64> = cells(m, &lay, &density).iter().map(|v| fa * v).collect();
    let pot: Vec<f64> = if mode == 0 {
        alloc::vec![0.0; lay.nodes.len()]
    } else {
        cells(m, &lay, &lateral).iter().map(|v| fa * v).collect()
    };
    let all = faces(m, rate);
    let (edge, wall) = if lay.periodic {
        (all, [0.0, 0.0])
    } else {
        let inner = all[1..n - 2].to_vec();
        let wall = if lay.dirichlet { [all[0], all[n - 2]] } else { [0.0, 0.0] };
        (inner, wall)
    };
    Ok(Operator {
        nodes: lay.nodes,
        mass,
        pot,
        mu,
        edge,
        wall,
        periodic: lay.periodic,
    })
}

fn operator(m: &WarpedMetric, mode: u8) -> Result<Operator> {
    m.check_fiber(DEFAULT_PSI_FLOOR)?;
    let op = assemble(m, mode, None)?;
    if let Some((u, &v)) = op.mass.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::SingularMass { index: op.nodes[u], value: v });
    }
    Ok(op)
}

impl Operator {
    fn len(&self) -> usize {
        self.nodes.len()
    }

    fn neighbours(&self, u: usize) -> [(Option<usize>, f64); 2] {
        let k = self.len();
        let left = if u > 0 {
            (Some(u - 1), self.edge[u - 1])
        } else if self.periodic {
            (Some(k - 1), self.edge[k - 1])
        } else {
            (None, self.wall[0])
        };
        let right = if u + 1 < k {
            (Some(u + 1), self.edge[u])
        } else if self.periodic {
            (Some(0), self.edge[k - 1])
        } else {
            (None, self.wall[1])
        };
        [left, right]
    }

    fn diag(&self, u: usize) -> f64 {
        self.neighbours(u).iter().map(|(_, c)| c).sum::<f64>() + self.mu * self.pot[u]
    }

    /// `A f`.
    fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|u| {
                let mut v = self.diag(u) * f[u];
                for (nb, c) in self.neighbours(u) {
                    if let Some(j) = nb {
                        v -= c * f[j];
                    }
                }
                v
            })
            .collect()
    }

    /// `L f = −M⁻¹ A f`, the discrete Laplacian.
    fn laplace(&self, f: &[f64]) -> Vec<f64> {
        self.apply(f).iter().zip(&self.mass).map(|(a, m)| -a / m).collect()
    }

    /// Solve `(A − σM) y = rhs`.
    fn solve_shifted(&self, sigma: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        let k = self.len();
        let b: Vec<f64> = (0..k).map(|u| self.diag(u) - sigma * self.mass[u]).collect();
        let mut a = alloc::vec![0.0; k];
        let mut c = alloc::vec![0.0; k];
        for u in 0..k {
            if u > 0 {
                a[u] = -self.edge[u - 1];
            }
            if u + 1 < k {
                c[u] = -self.edge[u];
            }
        }
        if self.periodic {
            a[0] = -self.edge[k - 1];
            c[k - 1] = -self.edge[k - 1];
            cyclic(&a, &b, &c, rhs)
        } else {
            thomas(&a, &b, &c, rhs)
        }
    }

    /// Gershgorin bound on the spectrum of `M⁻¹A`.
    fn spectral_bound(&self) -> f64 {
        (0..self.len())
            .map(|u| {
                let off: f64 = self.neighbours(u).iter().filter(|(j, _)| j.is_some()).map(|(_, c)| c.abs()).sum();
                (self.diag(u) + off) / self.mass[u]
            })
            .fold(0.0, f64::max)
    }

    fn dot_m(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.mass).map(|((x, y), m)| x * y * m).sum()
    }

    fn form(&self, f: &[f64]) -> f64 {
        f.iter().zip(self.apply(f)).map(|(a, b)| a * b).sum()
    }

    fn gather(&self, f: &ScalarProfile) -> Vec<f64> {
        self.nodes.iter().map(|&i| f.values[i]).collect()
    }

    /// Expand unknowns to the full grid: even extrapolation to the poles for
    /// mode 0, zero for mode 1.
    fn scatter(&self, u: &[f64], n: usize, mode: u8) -> ScalarProfile {
        let mut values = alloc::vec![0.0; n];
        for (k, &i) in self.nodes.iter().enumerate() {
            values[i] = u[k];
        }
        if !self.periodic && mode == 0 {
            values[0] = (4.0 * values[1] - values[2]) / 3.0;
            values[n - 1] = (4.0 * values[n - 2] - values[n - 3]) / 3.0;
        }
        ScalarProfile::new(values, mode)
    }

    fn mean(&self, f: &[f64]) -> f64 {
        self.dot_m(f, &alloc::vec![1.0; f.len()]) / self.mass.iter().sum::<f64>()
    }
}

fn check_profile(f: &ScalarProfile, m: &WarpedMetric) -> Result<()> {
    if f.values.len() != m.len() {
        return Err(Error::ShapeMismatch("profile must live on the metric's grid"));
    }
    Ok(())
}

/// `Δf = f_ss + 2(ψ_s/ψ) f_s − μ_k ψ⁻² f` on the profile's fiber mode.
pub fn laplace_apply(f: &ScalarProfile, m: &WarpedMetric) -> Result<ScalarProfile> {
    check_profile(f, m)?;
    let op = operator(m, f.fiber_mode)?;
    let lf = op.laplace(&op.gather(f));
    Ok(op.scatter(&lf, m.len(), f.fiber_mode))
}

/// Rayleigh quotient `∫ (|f_s|² + μ_k ψ⁻² f²) dV / ∫ f² dV`.
pub fn dirichlet_energy(f: &ScalarProfile, m: &WarpedMetric) -> Result<f64> {
    check_profile(f, m)?;
    let op = operator(m, f.fiber_mode)?;
    let u = op.gather(f);
    let norm = op.dot_m(&u, &u);
    if !(norm > 0.0) {
        return Err(Error::ZeroFunction);
    }
    Ok(op.form(&u) / norm)
}

/// `∫ f·Y dV`; zero for mode 1, whose fiber factor has mean zero.
pub fn integral(f: &ScalarProfile, m: &WarpedMetric) -> Result<f64> {
    check_profile(f, m)?;
    if f.fiber_mode != 0 {
        return Ok(0.0);
    }
    let op = operator(m, f.fiber_mode)?;
    let u = op.gather(f);
    Ok(u.iter().zip(&op.mass).map(|(a, b)| a * b).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenOptions {
    /// Target for `‖Δf + λf‖ / ‖f‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// Search the first fiber mode as well as mode 0.
    pub fiber_mode: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-8,
            max_iter: 500,
            fiber_mode: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenReport {
    pub lambda1: f64,
    /// Fiber mode attaining the minimum.
    pub branch: u8,
    pub eigenprofile: ScalarProfile,
    pub iterations: usize,
    pub residual: f64,
    /// Lowest eigenvalue found on each searched branch.
    pub branches: Vec<(u8, f64)>,
}

struct Eigenpair {
    lambda: f64,
    vector: Vec<f64>,
    iterations: usize,
    residual: f64,
}

/// Starting block: the first few lateral harmonics of the mode.
fn start_block(m: &WarpedMetric, op: &Operator, mode: u8) -> Vec<Vec<f64>> {
    let span = m.coordinate_span();
    let x0 = m.x()[0];
    let pi = core::f64::consts::PI;
    (0..BLOCK)
        .map(|j| {
            let j = j as f64;
            op.nodes
                .iter()
                .map(|&i| {
                    let u = (m.x()[i] - x0) / span;
                    let w = 0.01 * (7.0 * u + j).sin();
                    match (m.topology(), mode) {
                        (Topology::SphereSO3, 0) => ((j + 1.0) * pi * u).cos() + w,
                        (Topology::SphereSO3, _) => ((j + 1.0) * pi * u).sin() + w,
                        (Topology::CircleProduct, 0) => {
                            let k = (j / 2.0).floor() + 1.0;
                            if j as usize % 2 == 0 {
                                (2.0 * pi * k * u).cos() + w
                            } else {
                                (2.0 * pi * k * u).sin() + w
                            }
                        }
                        (Topology::CircleProduct, _) => {
                            let k = ((j + 1.0) / 2.0).floor();
                            if j as usize % 2 == 0 {
                                (2.0 * pi * k * u).cos() + w
                            } else {
                                (2.0 * pi * k * u).sin() + w
                            }
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Block size of the subspace iteration; covers the near-degenerate pairs
/// of circle metrics.
const BLOCK: usize = 3;

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi sweeps.
/// Returns eigenvalues ascending and the matching columns.
fn jacobi(mut a: [[f64; BLOCK]; BLOCK]) -> ([f64; BLOCK], [[f64; BLOCK]; BLOCK]) {
    let mut v = [[0.0; BLOCK]; BLOCK];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..50 {
        let off: f64 = (0..BLOCK)
            .flat_map(|i| (0..BLOCK).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..BLOCK {
            for q in p + 1..BLOCK {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..BLOCK {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..BLOCK {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order = [0usize; BLOCK];
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = core::array::from_fn(|k| a[order[k]][order[k]]);
    let vecs = core::array::from_fn(|r| core::array::from_fn(|k| v[r][order[k]]));
    (vals, vecs)
}

fn residual(op: &Operator, x: &[f64], lambda: f64) -> f64 {
    let ax = op.apply(x);
    let r: f64 = (0..op.len())
        .map(|u| {
            let d = ax[u] - lambda * op.mass[u] * x[u];
            d * d / op.mass[u]
        })
        .sum();
    (r / op.dot_m(x, x)).sqrt()
}

/// Lowest eigenpair of one mode: shifted block inverse iteration with
/// Rayleigh-Ritz to isolate it, then Rayleigh quotient iteration.
fn lowest(m: &WarpedMetric, op: &Operator, mode: u8, opts: &EigenOptions) -> Result<Eigenpair> {
    let demean = |x: &mut Vec<f64>| {
        if mode == 0 {
            let c = op.mean(x);
            x.iter_mut().for_each(|v| *v -= c);
        }
    };
    let normalize = |x: &mut Vec<f64>| {
        let nrm = op.dot_m(x, x).sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
    };
    let fail = |it: usize, res: f64| Error::ConvergenceFailure { iterations: it, residual: res };
    let mut block = start_block(m, op, mode);
    let mut it = 0;
    let mut shift = None;
    let mut prev = f64::INFINITY;
    let (mut x, mut rho) = loop {
        // M-orthonormalize, then rotate to Ritz vectors.
        for j in 0..BLOCK {
            demean(&mut block[j]);
            for i in 0..j {
                let c = op.dot_m(&block[j], &block[i]);
                let bi = block[i].clone();
                block[j].iter_mut().zip(&bi).for_each(|(a, b)| *a -= c * b);
            }
            normalize(&mut block[j]);
        }
        let ab: Vec<Vec<f64>> = block.iter().map(|b| op.apply(b)).collect();
        let h: [[f64; BLOCK]; BLOCK] =
            core::array::from_fn(|i| core::array::from_fn(|j| block[i].iter().zip(&ab[j]).map(|(a, b)| a * b).sum()));
        let (theta, q) = jacobi(h);
        block = (0..BLOCK)
            .map(|k| (0..op.len()).map(|r| (0..BLOCK).map(|i| q[i][k] * block[i][r]).sum()).collect())
            .collect();
        let res = residual(op, &block[0], theta[0]);
        if res <= opts.tol || (prev - theta[0]).abs() <= 1e-9 * theta[0].abs() {
            break (block[0].clone(), theta[0]);
        }
        if it >= opts.max_iter {
            return Err(fail(it, res));
        }
        prev = theta[0];
        it += 1;
        let sigma = *shift.get_or_insert(-0.1 * theta[0].abs().max(f64::MIN_POSITIVE));
        for b in block.iter_mut() {
            let rhs: Vec<f64> = b.iter().zip(&op.mass).map(|(a, w)| a * w).collect();
            *b = op.solve_shifted(sigma, &rhs).ok_or_else(|| fail(it, res))?;
        }
    };
    loop {
        let res = residual(op, &x, rho);
        if res <= opts.tol {
            return Ok(Eigenpair {
                lambda: rho,
                vector: x,
                iterations: it,
                residual: res,
            });
        }
        if it >= opts.max_iter {
            return Err(fail(it, res));
        }
        it += 1;
        let rhs: Vec<f64> = x.iter().zip(&op.mass).map(|(a, b)| a * b).collect();
        let mut y = match op.solve_shifted(rho, &rhs) {
            Some(y) if y.iter().all(|v| v.is_finite()) => y,
            // An exact hit on the shift: x is already an eigenvector.
            _ => {
                return Ok(Eigenpair {
                    lambda: rho,
                    vector: x,
                    iterations: it,
                    residual: res,
                })
            }
        };
        demean(&mut y);
        normalize(&mut y);
        rho = op.form(&y);
        x = y;
    }
}

/// Smallest nonzero eigenvalue of `−Δ` over the searched fiber modes.
pub fn lambda1(m: &WarpedMetric) -> Result<EigenReport> {
    lambda1_with(m, &EigenOptions::default())
}

pub fn lambda1_with(m: &WarpedMetric, opts: &EigenOptions) -> Result<EigenReport> {
    let modes: &[u8] = if opts.fiber_mode { &[0, 1] } else { &[0] };
    let mut best: Option<(u8, Operator, Eigenpair)> = None;
    let mut branches = Vec::new();
    let mut iterations = 0;
    for &mode in modes {
        let op = operator(m, mode)?;
        let pair = lowest(m, &op, mode, opts)?;
        iterations += pair.iterations;
        branches.push((mode, pair.lambda));
        if best.as_ref().map_or(true, |(_, _, b)| pair.lambda < b.lambda) {
            best = Some((mode, op, pair));
        }
    }
    let (mode, op, pair) = best.expect("at least one mode is searched");
    Ok(EigenReport {
        lambda1: pair.lambda,
        branch: mode,
        eigenprofile: op.scatter(&pair.vector, m.len(), mode),
        iterations,
        residual: pair.residual,
        branches,
    })
}

/// Lowest nonzero eigenpair on a single fiber mode.
pub fn eigen_branch(m: &WarpedMetric, fiber_mode: u8, opts: &EigenOptions) -> Result<EigenReport> {
    let op = operator(m, fiber_mode)?;
    let pair = lowest(m, &op, fiber_mode, opts)?;
    Ok(EigenReport {
        lambda1: pair.lambda,
        branch: fiber_mode,
        eigenprofile: op.scatter(&pair.vector, m.len(), fiber_mode),
        iterations: pair.iterations,
        residual: pair.residual,
        branches: alloc::vec![(fiber_mode, pair.lambda)],
    })
}

/// Largest stable `dτ` for the explicit biharmonic step on `m`.
pub fn backstep_limit(m: &WarpedMetric, fiber_mode: u8) -> Result<f64> {
    let b = operator(m, fiber_mode)?.spectral_bound();
    Ok(1.0 / (b * b))
}

fn backstep_raw(op: &Operator, next: &Operator, u: &[f64], dtau: f64) -> Vec<f64> {
    let l2 = op.laplace(&op.laplace(u));
    (0..op.len())
        .map(|k| op.mass[k] / next.mass[k] * (u[k] - dtau * l2[k]))
        .collect()
}

/// One explicit step of `∂_τ f = −Δ²f + ½ f tr_g E` backward in time: the
/// metric moves from `m` to `m − dτ·E`. The zeroth-order term is applied as
/// the exact ratio of cell masses, so `∫ f dV` is preserved to round-off.
pub fn biharmonic_backstep(f: &ScalarProfile, m: &WarpedMetric, e: &TangentField, dtau: f64) -> Result<ScalarProfile> {
    check_profile(f, m)?;
    if e.len() != m.len() {
        return Err(Error::ShapeMismatch("velocity must live on the metric's grid"));
    }
    if !(dtau > 0.0) || !dtau.is_finite() {
        return Err(Error::StepUnderflow { dt: dtau });
    }
    let op = operator(m, f.fiber_mode)?;
    let next = operator(&displaced(m, e, -dtau), f.fiber_mode)?;
    let u = backstep_raw(&op, &next, &op.gather(f), dtau);
    Ok(op.scatter(&u, m.len(), f.fiber_mode))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    /// `dτ = dtau_safety / ‖M⁻¹A‖²` (Gershgorin bound).
    pub dtau_safety: f64,
    /// Number of times at which the two evolution identities are sampled.
    pub identity_samples: usize,
    pub eigen: EigenOptions,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            dtau_safety: 0.5,
            identity_samples: 10,
            eigen: EigenOptions::default(),
        }
    }
}

/// Both sides of the `‖f‖²` and `‖∇f‖²` evolution identities at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentitySample {
    pub tau: f64,
    pub dtau: f64,
    /// Forward difference of `‖f‖²` over one step.
    pub l2_rate: f64,
    /// `−2‖Δf‖² + ∫ ½ tr E f² dV`.
    pub l2_rhs: f64,
    /// Forward difference of `‖∇f‖²`.
    pub h1_rate: f64,
    /// `−2‖∇Δf‖² + ∫ ⟨E, ∇f⊗∇f⟩ − ∫ tr E (fΔf + ½|∇f|²)`.
    pub h1_rhs: f64,
    /// The same with the opposite sign on `∫ ⟨E, ∇f⊗∇f⟩`.
    pub h1_rhs_flipped: f64,
}

impl IdentitySample {
    pub fn l2_error(&self) -> f64 {
        rel_gap(self.l2_rate, self.l2_rhs)
    }

    pub fn h1_error(&self) -> f64 {
        rel_gap(self.h1_rate, self.h1_rhs)
    }

    pub fn h1_flipped_error(&self) -> f64 {
        rel_gap(self.h1_rate, self.h1_rhs_flipped)
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecayReport {
    pub lambda_t: f64,
    /// `𝓔(g₀, f₀)` of the back-flowed profile.
    pub lambda_0_bound: f64,
    pub lambda_0_true: f64,
    /// `|∫f₀ dV − ∫f_T dV| / ∫|f_T| dV`.
    pub mass_drift: f64,
    pub sobolev_a: f64,
    /// `F(g₀)`.
    pub epsilon: f64,
    /// `lambda_0_bound − 2·lambda_t`.
    pub slack: f64,
    pub substeps: usize,
    pub identities: Vec<IdentitySample>,
    pub final_profile: ScalarProfile,
}

impl EigenDecayReport {
    pub fn max_l2_identity_error(&self) -> f64 {
        self.identities.iter().map(|s| s.l2_error()).fold(0.0, f64::max)
    }

    pub fn max_h1_identity_error(&self) -> f64 {
        self.identities.iter().map(|s| s.h1_error()).fold(0.0, f64::max)
    }

    pub fn min_h1_flipped_error(&self) -> f64 {
        self.identities.iter().map(|s| s.h1_flipped_error()).fold(f64::INFINITY, f64::min)
    }
}

fn identity_sample(m: &WarpedMetric, e: &TangentField, op: &Operator, u: &[f64], tau: f64, dtau: f64) -> Result<IdentitySample> {
    let mode = if op.mu == 0.0 { 0 } else { 1 };
    let next = operator(&displaced(m, e, -dtau), mode)?;
    let v = backstep_raw(op, &next, u, dtau);
    let rate = assemble(m, mode, Some(e))?;

    let lu = op.laplace(u);
    let l2_now = op.dot_m(u, u);
    let l2_next = next.dot_m(&v, &v);
    let half_tr: f64 = (0..op.len()).map(|k| rate.mass[k] * u[k] * u[k]).sum();
    let l2_rhs = -2.0 * op.dot_m(&lu, &lu) + half_tr;

    let h1_next = next.form(&v);
    // −fᵀȦf is the discrete ∫⟨E,∇f⊗∇f⟩ − ½∫trE|∇f|²; 2fᵀA(ṁ/m·f) is −∫trE fΔf.
    let grad_lap = op.form(&lu);
    let a_dot_form = rate.form(u);
    let weighted: Vec<f64> = (0..op.len()).map(|k| rate.mass[k] / op.mass[k] * u[k]).collect();
    let tr_f_lap: f64 = 2.0 * op.apply(u).iter().zip(&weighted).map(|(a, b)| a * b).sum::<f64>();
    let h1_rhs = -2.0 * grad_lap - a_dot_form + tr_f_lap;

    // ∫⟨E,∇f⊗∇f⟩ alone: E_ss on faces against the lateral form, E_ff on cells
    // against the fiber potential.
    let full = faces(m, None);
    let n = m.len();
    let periodic = m.is_periodic();
    let mut e_grad = 0.0;
    for (i, c) in full.iter().enumerate() {
        let j = (i + 1) % n;
        let fi = value_at(op, u, i);
        let fj = value_at(op, u, j);
        let (Some(fi), Some(fj)) = (fi, fj) else { continue };
        let ess = 2.0 * face(&e.dphi, i, periodic, false) / face(m.phi(), i, periodic, false);
        e_grad += c * ess * (fi - fj) * (fi - fj);
    }
    for (k, &i) in op.nodes.iter().enumerate() {
        let eff = 2.0 * e.dpsi[i] / m.psi()[i];
        e_grad += op.mu * op.pot[k] * eff * u[k] * u[k];
    }
    Ok(IdentitySample {
        tau,
        dtau,
        l2_rate: (l2_next - l2_now) / dtau,
        l2_rhs,
        h1_rate: (h1_next - op.form(u)) / dtau,
        h1_rhs,
        h1_rhs_flipped: h1_rhs - 2.0 * e_grad,
    })
}

/// Value of the unknown vector at grid node `i`: `None` for a pole of a
/// mode-0 sphere (no face there), zero for a pinned pole.
fn value_at(op: &Operator, u: &[f64], i: usize) -> Option<f64> {
    if op.periodic {
        return Some(u[i]);
    }
    let k = op.len();
    if i == 0 || i == k + 1 {
        return if op.mu == 0.0 { None } else { Some(0.0) };
    }
    Some(u[i - 1])
}

/// Interval `k → k+1` of a trajectory: start metric, end metric on the same
/// grid, and the constant velocity joining them.
fn interval(traj: &FlowTrajectory, k: usize) -> Result<(WarpedMetric, TangentField, f64)> {
    let a = &traj.samples[k];
    let b = &traj.samples[k + 1];
    if a.velocity.is_none() {
        return Err(Error::MissingVelocity { index: k });
    }
    let end = b.pre_regrid.as_ref().unwrap_or(&b.metric);
    let dt = b.t - a.t;
    let inv = 1.0 / dt;
    let e = TangentField {
        dphi: end.phi().iter().zip(a.metric.phi()).map(|(p, q)| (p - q) * inv).collect(),
        dpsi: end.psi().iter().zip(a.metric.psi()).map(|(p, q)| (p - q) * inv).collect(),
    };
    Ok((a.metric.clone(), e, dt))
}

/// Carry a profile from a resampled grid back to the grid it was resampled
/// from, by Hermite interpolation in arclength, then restore `∫ f dV` with a
/// constant shift (mode 0).
fn transfer(f: &ScalarProfile, from: &WarpedMetric, to: &WarpedMetric) -> Result<ScalarProfile> {
    let src = arclength(from);
    let dst = arclength(to);
    let n = from.len();
    let periodic = from.is_periodic();
    let v = &f.values;
    let slopes: Vec<f64> = (0..n)
        .map(|i| {
            let l = phi_node(i as isize - 1, n, periodic);
            let r = phi_node(i as isize + 1, n, periodic);
            if !periodic && (i == 0 || i == n - 1) {
                if f.fiber_mode == 0 {
                    0.0
                } else {
                    let j = if i == 0 { 1 } else { n - 2 };
                    (v[j] - v[i]) / (src.s[j] - src.s[i])
                }
            } else {
                let sl = if i == 0 && periodic { src.s[l] - src.length } else { src.s[l] };
                let sr = if i == n - 1 && periodic { src.length } else { src.s[r] };
                (v[r] - v[l]) / (sr - sl)
            }
        })
        .collect();
    let period = if periodic { Some(src.length) } else { None };
    let scale = src.length / dst.length;
    let mut out = ScalarProfile::new(
        dst.s.iter().map(|&s| hermite(&src.s, v, &slopes, period, s * scale)).collect(),
        f.fiber_mode,
    );
    if f.fiber_mode == 0 {
        let target = integral(f, from)?;
        let op = operator(to, 0)?;
        let now: f64 = op.gather(&out).iter().zip(&op.mass).map(|(a, b)| a * b).sum();
        let shift = (target - now) / op.mass.iter().sum::<f64>();
        out.values.iter_mut().for_each(|x| *x += shift);
    }
    Ok(out)
}

/// Push `f_T` back to `t = 0` along the trajectory and compare the Rayleigh
/// quotient it reaches with `λ(g₀)`.
pub fn run_backward(traj: &FlowTrajectory, f_t: &ScalarProfile, sobolev_a: f64) -> Result<EigenDecayReport> {
    run_backward_with(traj, f_t, sobolev_a, &BackwardOptions::default())
}

pub fn run_backward_with(
    traj: &FlowTrajectory,
    f_t: &ScalarProfile,
    sobolev_a: f64,
    opts: &BackwardOptions,
) -> Result<EigenDecayReport> {
    let samples = &traj.samples;
    let last = samples.last().ok_or(Error::ShapeMismatch("empty trajectory"))?;
    check_profile(f_t, &last.metric)?;
    let mode = f_t.fiber_mode;
    let lambda_t = dirichlet_energy(f_t, &last.metric)?;
    let mass_t = integral(f_t, &last.metric)?;
    let abs_t = {
        let op = operator(&last.metric, mode)?;
        op.gather(f_t).iter().zip(&op.mass).map(|(a, b)| a.abs() * b).sum::<f64>()
    };

    let intervals = samples.len() - 1;
    let picks: Vec<usize> = if opts.identity_samples == 0 || intervals == 0 {
        Vec::new()
    } else {
        (0..opts.identity_samples.min(intervals))
            .map(|j| intervals - 1 - (intervals * (2 * j + 1)) / (2 * opts.identity_samples.min(intervals)))
            .collect()
    };

    let t_end = last.t;
    let mut f = f_t.clone();
    let mut substeps = 0usize;
    let mut identities = Vec::new();
    for k in (0..intervals).rev() {
        let next = &samples[k + 1];
        if let Some(pre) = &next.pre_regrid {
            f = transfer(&f, &next.metric, pre)?;
        }
        let (start, e, dt) = interval(traj, k)?;
        if !(dt > 0.0) {
            continue;
        }
        let end = displaced(&start, &e, dt);
        let limit = backstep_limit(&end, mode)?.min(backstep_limit(&start, mode)?) * opts.dtau_safety;
        let count = (dt / limit).ceil().max(1.0) as usize;
        let dtau = dt / count as f64;
        let mut u: Option<Vec<f64>> = None;
        for j in 0..count {
            let t = dt - j as f64 * dtau;
            let m = displaced(&start, &e, t);
            let op = operator(&m, mode)?;
            let cur = u.take().unwrap_or_else(|| op.gather(&f));
            if j == 0 && picks.contains(&k) {
                identities.push(identity_sample(&m, &e, &op, &cur, t_end - (samples[k].t + t), dtau)?);
            }
            let nm = if j + 1 == count { start.clone() } else { displaced(&start, &e, t - dtau) };
            let next_op = operator(&nm, mode)?;
            u = Some(backstep_raw(&op, &next_op, &cur, dtau));
            substeps += 1;
        }
        let op = operator(&start, mode)?;
        f = op.scatter(&u.expect("at least one substep"), start.len(), mode);
    }
    let m0 = &samples[0].metric;
    let lambda_0_bound = dirichlet_energy(&f, m0)?;
    let lambda_0_true = lambda1_with(m0, &opts.eigen)?.lambda1;
    let mass_0 = integral(&f, m0)?;
    Ok(EigenDecayReport {
        lambda_t,
        lambda_0_bound,
        lambda_0_true,
        mass_drift: (mass_0 - mass_t).abs() / abs_t,
        sobolev_a,
        epsilon: samples[0].energy,
        slack: lambda_0_bound - 2.0 * lambda_t,
        substeps,
        identities,
        final_profile: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::presets::*;
    use crate::geometry::FiberSpec;
    use core::f64::consts::PI;

    #[test]
    fn constants_are_harmonic() {
        for m in [round_s3(40, 1.0).unwrap(), tube(32, 2.0, 1.0, FiberSpec::round_sphere(), |x| 1.0 + 0.2 * (PI * x).sin()).unwrap()] {
            let f = ScalarProfile::new(alloc::vec![2.5; m.len()], 0);
            let lf = laplace_apply(&f, &m).unwrap();
            assert!(lf.values.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn cosine_on_round_sphere() {
        let mut prev = None;
        for n in [50usize, 100, 200] {
            let m = round_s3(n, 1.0).unwrap();
            let f = ScalarProfile::from_arclength(&m, 0, |s| s.cos());
            let lf = laplace_apply(&f, &m).unwrap();
            let err = (1..n - 1)
                .map(|i| (lf.values[i] + 3.0 * f.values[i]).abs())
                .fold(0.0, f64::max);
            let q = dirichlet_energy(&f, &m).unwrap();
            assert!((q - 3.0).abs() < 10.0 / (n * n) as f64, "{q}");
            if let Some(p) = prev {
                assert!(p / err > 3.5, "{p} {err}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn first_eigenvalue_of_round_sphere() {
        let mut prev = None;
        for n in [100usize, 200, 400] {
            let r = lambda1(&round_s3(n, 1.0).unwrap()).unwrap();
            assert!(r.residual <= 1e-8);
            for &(_, l) in &r.branches {
                assert!((l - 3.0).abs() < 1e-2, "{l}");
            }
            let err = (r.lambda1 - 3.0).abs();
            if let Some(p) = prev {
                assert!(p / err > 3.5, "{p} {err}");
            }
            prev = Some(err);
        }
    }

    #[test]
    fn eigenvalue_scaling() {
        let m = dumbbell(64, 0.5).unwrap();
        let a = lambda1(&m).unwrap().lambda1;
        let b = lambda1(&m.scaled(1.7)).unwrap().lambda1;
        assert!((b * 1.7 * 1.7 / a - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eigenprofile_quotient() {
        let m = dumbbell(80, 0.6).unwrap();
        let r = lambda1(&m).unwrap();
        let q = dirichlet_energy(&r.eigenprofile, &m).unwrap();
        assert!((q - r.lambda1).abs() < 1e-8);
    }

    #[test]
    fn zero_function_is_rejected() {
        let m = round_s3(32, 1.0).unwrap();
        let f = ScalarProfile::new(alloc::vec![0.0; 32], 0);
        assert_eq!(dirichlet_energy(&f, &m), Err(Error::ZeroFunction));
    }

    #[test]
    fn static_backstep_decays_eigenfunction() {
        let m = round_s3(48, 1.0).unwrap();
        let r = lambda1(&m).unwrap();
        let e = TangentField::zeros(48);
        let dtau = backstep_limit(&m, r.branch).unwrap() * 0.5;
        let steps = 200;
        let mut f = r.eigenprofile.clone();
        for _ in 0..steps {
            f = biharmonic_backstep(&f, &m, &e, dtau).unwrap();
        }
        let tau = dtau * steps as f64;
        let want = (-r.lambda1 * r.lambda1 * tau).exp();
        let i = 12;
        let got = f.values[i] / r.eigenprofile.values[i];
        assert!((got / want - 1.0).abs() < 1e-2);
    }

    #[test]
    fn constant_is_fixed_without_velocity() {
        let m = dumbbell(40, 0.4).unwrap();
        let f = ScalarProfile::new(alloc::vec![1.0; 40], 0);
        let g = biharmonic_backstep(&f, &m, &TangentField::zeros(40), 1e-6).unwrap();
        assert!(g.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
