//! Convolutional PML (κ = 1) for the TMz update.

use super::EPS0;

/// Polynomial grading order of the PML conductivity.
const GRADING: i32 = 3;
/// Frequency-shift parameter at the PML interface (S/m).
const ALPHA_MAX: f64 = 0.05;

/// Recursive-convolution coefficients along one axis.
#[derive(Clone, Debug)]
pub(crate) struct Profile {
    /// Per node: `(b, a)`; `a == 0` outside the absorbing layer.
    pub e: Vec<(f64, f64)>,
    pub h: Vec<(f64, f64)>,
    /// Node indices with nonzero `a`.
    pub e_active: Vec<usize>,
    pub h_active: Vec<usize>,
}

impl Profile {
    /// Profile for `n` nodes with `p`-cell layers on both ends.
    pub fn new(n: usize, p: usize, d: f64, dt: f64) -> Self {
        let eta0 = (super::MU0 / EPS0).sqrt();
        let sigma_max = 0.8 * (GRADING as f64 + 1.0) / (eta0 * d);
        let coeff = |rho: f64| -> (f64, f64) {
            if rho <= 0.0 || p == 0 {
                return (1.0, 0.0);
            }
            let rho = rho.min(1.0);
            let sigma = sigma_max * rho.powi(GRADING);
            let alpha = ALPHA_MAX * (1.0 - rho);
            let b = (-(sigma + alpha) * dt / EPS0).exp();
            let a = if sigma > 0.0 { sigma * (b - 1.0) / (sigma + alpha) } else { 0.0 };
            (b, a)
        };
        let pf = p as f64;
        let last = n as f64 - 1.0;
        let depth = |pos: f64| -> f64 {
            let left = (pf - pos) / pf;
            let right = (pos - (last - pf)) / pf;
            left.max(right)
        };
        let e: Vec<_> = (0..n).map(|i| coeff(depth(i as f64))).collect();
        let h: Vec<_> = (0..n).map(|i| coeff(depth(i as f64 + 0.5))).collect();
        // Interior E nodes only; boundary nodes are PEC.
        let e_active = (1..n.saturating_sub(1)).filter(|&i| e[i].1 != 0.0).collect();
        let h_active = (0..n.saturating_sub(1)).filter(|&i| h[i].1 != 0.0).collect();
        Self {
            e,
            h,
            e_active,
            h_active,
        }
    }
}
