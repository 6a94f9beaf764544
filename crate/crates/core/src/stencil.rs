//! Finite-difference stencils in the lateral coordinate, with ghost nodes.
//!
//! Derivatives in arclength go through the chain rule `d/ds = φ⁻¹ d/dx`.
//! `ψ_s` uses a five-point fourth-order first difference so that
//! `(K_Σ − ψ_s²)/ψ²` stays bounded next to a pole; `ψ_xx` and `φ_x` use
//! three-point centered differences.

/// Resolve a possibly out-of-range node index for ψ. Returns the stored
/// node and the sign of the odd reflection across a pole.
#[inline]
pub(crate) fn psi_node(i: isize, n: usize, periodic: bool) -> (usize, f64) {
    let last = n as isize - 1;
    if periodic {
        (i.rem_euclid(n as isize) as usize, 1.0)
    } else if i < 0 {
        ((-i) as usize, -1.0)
    } else if i > last {
        ((2 * last - i) as usize, -1.0)
    } else {
        (i as usize, 1.0)
    }
}

/// φ extends evenly across a pole.
#[inline]
pub(crate) fn phi_node(i: isize, n: usize, periodic: bool) -> usize {
    let last = n as isize - 1;
    if periodic {
        i.rem_euclid(n as isize) as usize
    } else if i < 0 {
        (-i) as usize
    } else if i > last {
        (2 * last - i) as usize
    } else {
        i as usize
    }
}

pub(crate) const D1_PSI: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
pub(crate) const D2_PSI: [f64; 5] = [0.0, 1.0, -2.0, 1.0, 0.0];
pub(crate) const D1_PHI: [f64; 3] = [-0.5, 0.0, 0.5];

/// The samples a single node's curvature depends on.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Local {
    pub psi: [f64; 5],
    pub psi_nodes: [(usize, f64); 5],
    pub phi: [f64; 3],
    pub phi_nodes: [usize; 3],
}

impl Local {
    pub(crate) fn gather(phi: &[f64], psi: &[f64], i: usize, periodic: bool) -> Self {
        let n = psi.len();
        let mut out = Local {
            psi: [0.0; 5],
            psi_nodes: [(0, 1.0); 5],
            phi: [0.0; 3],
            phi_nodes: [0; 3],
        };
        for k in 0..5 {
            let (j, sign) = psi_node(i as isize + k as isize - 2, n, periodic);
            out.psi_nodes[k] = (j, sign);
            out.psi[k] = sign * psi[j];
        }
        for k in 0..3 {
            let j = phi_node(i as isize + k as isize - 1, n, periodic);
            out.phi_nodes[k] = j;
            out.phi[k] = phi[j];
        }
        out
    }

    /// `(ψ_s, ψ_ss)` at the centre node.
    #[inline]
    pub(crate) fn derivatives(&self, h: f64) -> (f64, f64) {
        let (a, b, c) = self.raw(h);
        let p = self.phi[1];
        (a / p, b / (p * p) - a * c / (p * p * p))
    }

    #[inline]
    fn raw(&self, h: f64) -> (f64, f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for k in 0..5 {
            a += D1_PSI[k] * self.psi[k];
            b += D2_PSI[k] * self.psi[k];
        }
        let c = (self.phi[2] - self.phi[0]) * 0.5;
        (a / h, b / (h * h), c / h)
    }

    /// Reduced energy integrand `4ψ_ss² + 2(K − ψ_s²)²/ψ²` per unit arclength
    /// and its partial derivatives with respect to the local samples.
    pub(crate) fn density_with_partials(&self, h: f64, k_sigma: f64) -> Density {
        let (a, b, c) = self.raw(h);
        let p = self.phi[1];
        let q = self.psi[2];
        let p2 = p * p;
        let p3 = p2 * p;
        let t = a / p;
        let s = b / p2 - a * c / p3;
        let defect = k_sigma - t * t;
        let q2 = q * q;
        let value = 4.0 * s * s + 2.0 * defect * defect / q2;

        let di_ds = 8.0 * s;
        let di_dt = -8.0 * t * defect / q2;
        let di_dq = -4.0 * defect * defect / (q2 * q);

        let dt_da = 1.0 / p;
        let dt_dp = -a / p2;
        let ds_da = -c / p3;
        let ds_db = 1.0 / p2;
        let ds_dc = -a / p3;
        let ds_dp = -2.0 * b / p3 + 3.0 * a * c / (p2 * p2);

        let di_da = di_ds * ds_da + di_dt * dt_da;
        let di_db = di_ds * ds_db;
        let mut d_psi = [0.0; 5];
        for k in 0..5 {
            d_psi[k] = di_da * D1_PSI[k] / h + di_db * D2_PSI[k] / (h * h);
        }
        d_psi[2] += di_dq;
        let di_dc = di_ds * ds_dc;
        let mut d_phi = [0.0; 3];
        for k in 0..3 {
            d_phi[k] = di_dc * D1_PHI[k] / h;
        }
        d_phi[1] += di_ds * ds_dp + di_dt * dt_dp;
        Density {
            value,
            d_psi,
            d_phi,
        }
    }

    /// `ψ_s` and its partials.
    pub(crate) fn slope_with_partials(&self, h: f64) -> Density {
        let (a, _, _) = self.raw(h);
        let p = self.phi[1];
        let mut d_psi = [0.0; 5];
        for k in 0..5 {
            d_psi[k] = D1_PSI[k] / (h * p);
        }
        let mut d_phi = [0.0; 3];
        d_phi[1] = -a / (p * p);
        Density {
            value: a / p,
            d_psi,
            d_phi,
        }
    }

    /// `K₁ = −ψ_ss/ψ` and its partials.
    pub(crate) fn k1_with_partials(&self, h: f64) -> Density {
        let (a, b, c) = self.raw(h);
        let p = self.phi[1];
        let q = self.psi[2];
        let p2 = p * p;
        let p3 = p2 * p;
        let s = b / p2 - a * c / p3;
        let ds_da = -c / p3;
        let ds_db = 1.0 / p2;
        let ds_dc = -a / p3;
        let ds_dp = -2.0 * b / p3 + 3.0 * a * c / (p2 * p2);
        let mut d_psi = [0.0; 5];
        for k in 0..5 {
            d_psi[k] = -(ds_da * D1_PSI[k] / h + ds_db * D2_PSI[k] / (h * h)) / q;
        }
        d_psi[2] += s / (q * q);
        let mut d_phi = [0.0; 3];
        for k in 0..3 {
            d_phi[k] = -ds_dc * D1_PHI[k] / h / q;
        }
        d_phi[1] -= ds_dp / q;
        Density {
            value: -s / q,
            d_psi,
            d_phi,
        }
    }
}

pub(crate) struct Density {
    pub value: f64,
    pub d_psi: [f64; 5],
    pub d_phi: [f64; 3],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflections() {
        assert_eq!(psi_node(-1, 20, false), (1, -1.0));
        assert_eq!(psi_node(20, 20, false), (18, -1.0));
        assert_eq!(psi_node(-2, 20, true), (18, 1.0));
        assert_eq!(phi_node(21, 20, false), 17);
    }

    #[test]
    fn partials_match_finite_differences() {
        let local = Local {
            psi: [0.7, 0.9, 1.05, 1.1, 1.3],
            psi_nodes: [(0, 1.0); 5],
            phi: [1.1, 0.95, 1.2],
            phi_nodes: [0; 3],
        };
        let h = 0.1;
        let d = local.density_with_partials(h, 1.0);
        let eps = 1e-6;
        for k in 0..5 {
            let mut up = local;
            let mut dn = local;
            up.psi[k] += eps;
            dn.psi[k] -= eps;
            let fd = (up.density_with_partials(h, 1.0).value
                - dn.density_with_partials(h, 1.0).value)
                / (2.0 * eps);
            assert!((fd - d.d_psi[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "psi {k}");
        }
        for k in 0..3 {
            let mut up = local;
            let mut dn = local;
            up.phi[k] += eps;
            dn.phi[k] -= eps;
            let fd = (up.density_with_partials(h, 1.0).value
                - dn.density_with_partials(h, 1.0).value)
                / (2.0 * eps);
            assert!((fd - d.d_phi[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "phi {k}");
        }
    }

    #[test]
    fn slope_and_k1_partials() {
        let local = Local {
            psi: [0.7, 0.9, 1.05, 1.1, 1.3],
            psi_nodes: [(0, 1.0); 5],
            phi: [1.1, 0.95, 1.2],
            phi_nodes: [0; 3],
        };
        let h = 0.1;
        let eps = 1e-6;
        for f in [Local::slope_with_partials, Local::k1_with_partials] {
            let d = f(&local, h);
            for k in 0..5 {
                let (mut up, mut dn) = (local, local);
                up.psi[k] += eps;
                dn.psi[k] -= eps;
                let fd = (f(&up, h).value - f(&dn, h).value) / (2.0 * eps);
                assert!((fd - d.d_psi[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
            for k in 0..3 {
                let (mut up, mut dn) = (local, local);
                up.phi[k] += eps;
                dn.phi[k] -= eps;
                let fd = (f(&up, h).value - f(&dn, h).value) / (2.0 * eps);
                assert!((fd - d.d_phi[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
