//! Focal and KL losses over heatmaps, and their gradients w.r.t. logits.
//!
//! Focal loss is the softmax form `−Σ_c y_c (1 − p_c)^γ ln p_c` where `y` is a
//! Gaussian splat centred on the goal cell (kernel truncated at 4σ and
//! renormalised). With `γ = 0` and a vanishing σ it is plain cross-entropy
//! at the goal cell.

use super::heatmap::{GridSpec, Heatmap};
use crate::error::{Error, Result};

/// Sparse normalised target distribution `(cell index, mass)` around the
/// goal's cell.
pub fn splat_target(grid: &GridSpec, goal: [f64; 2], sigma: f64) -> Result<Vec<(usize, f64)>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("target sigma must be > 0, got {sigma}")));
    }
    let (cx, cy) = grid
        .cell_coords(goal)
        .ok_or_else(|| Error::Input(format!("goal {goal:?} lies outside the heatmap grid")))?;
    let radius = (4.0 * sigma).ceil().max(1.0) as usize;
    let x0 = cx.saturating_sub(radius);
    let x1 = (cx + radius).min(grid.nx - 1);
    let y0 = cy.saturating_sub(radius);
    let y1 = (cy + radius).min(grid.ny - 1);
    let kernel = |d: usize| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
    let gx: Vec<f64> = (x0..=x1).map(|x| kernel(x.abs_diff(cx))).collect();
    let gy: Vec<f64> = (y0..=y1).map(|y| kernel(y.abs_diff(cy))).collect();
    let mut cells = Vec::with_capacity(gx.len() * gy.len());
    for (j, wy) in gy.iter().enumerate() {
        for (i, wx) in gx.iter().enumerate() {
            let w = wx * wy;
            if w > 0.0 {
                cells.push(((y0 + j) * grid.nx + x0 + i, w));
            }
        }
    }
    let total: f64 = cells.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut cells {
        *w /= total;
    }
    Ok(cells)
}

#[inline]
fn pow_gamma(q: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else if gamma == 1.0 {
        q
    } else if gamma == 2.0 {
        q * q
    } else {
        q.powf(gamma)
    }
}

/// Focal loss of a normalised prediction against a goal position.
pub fn focal_loss(pred: &Heatmap, goal: [f64; 2], gamma: f64, sigma: f64) -> Result<f64> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Config(format!("focal gamma must be >= 0, got {gamma}")));
    }
    let target = splat_target(pred.grid(), goal, sigma)?;
    let p = pred.values();
    Ok(target
        .iter()
        .map(|&(c, y)| -y * pow_gamma(1.0 - p[c], gamma) * p[c].ln())
        .sum())
}

/// `Σ_c max(t_c,ε) · ln(max(t_c,ε) / max(s_c,ε))`.
pub fn kl_divergence(teacher: &Heatmap, student: &Heatmap, floor: f64) -> Result<f64> {
    if !teacher.same_shape(student) {
        return Err(Error::Input(format!(
            "heatmap shapes differ: {}x{} vs {}x{}",
            teacher.grid().nx,
            teacher.grid().ny,
            student.grid().nx,
            student.grid().ny
        )));
    }
    Ok(teacher
        .values()
        .iter()
        .zip(student.values())
        .map(|(t, s)| {
            let (t, s) = (t.max(floor), s.max(floor));
            t * (t.ln() - s.ln())
        })
        .sum())
}

/// Adds `weight · ∂focal/∂z` to `dz` and returns the unweighted focal value.
///
/// `p` and `logp` are the softmax and log-softmax of the logits `z`.
pub(crate) fn focal_grad(
    p: &[f64],
    logp: &[f64],
    target: &[(usize, f64)],
    gamma: f64,
    weight: f64,
    dz: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    let mut u_sum = 0.0;
    let mut u = Vec::with_capacity(target.len());
    for &(c, y) in target {
        let (pc, lp) = (p[c], logp[c]);
        let q = 1.0 - pc;
        let qg = pow_gamma(q, gamma);
        loss -= y * qg * lp;
        // u_c = p_c · ∂L/∂p_c
        let mut uc = -y * qg;
        if gamma != 0.0 && q > 0.0 {
            uc += y * gamma * pc * pow_gamma(q, gamma - 1.0) * lp;
        }
        u_sum += uc;
        u.push((c, uc));
    }
    for (d, pj) in dz.iter_mut().zip(p) {
        *d -= weight * pj * u_sum;
    }
    for (c, uc) in u {
        dz[c] += weight * uc;
    }
    loss
}

/// Adds `weight · ∂KL(t‖softmax(z))/∂z` to `dz` and returns the unweighted
/// KL value.
pub(crate) fn kl_grad(
    teacher: &[f64],
    p: &[f64],
    logp: &[f64],
    floor: f64,
    weight: f64,
    dz: &mut [f64],
) -> f64 {
    let ln_floor = floor.ln();
    let mut value = 0.0;
    let mut u_sum = 0.0;
    for c in 0..p.len() {
        let t = teacher[c].max(floor);
        let ln_s = if p[c] > floor { logp[c] } else { ln_floor };
        value += t * (t.ln() - ln_s);
        if p[c] > floor {
            u_sum -= t;
        }
    }
    for c in 0..p.len() {
        let uc = if p[c] > floor { -teacher[c].max(floor) } else { 0.0 };
        dz[c] += weight * (uc - p[c] * u_sum);
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            nx: n,
            ny: n,
            origin: [0.0, 0.0],
            cell_size: 1.0,
        }
    }

    #[test]
    fn uniform_point_target_is_log_cells() {
        let h = Heatmap::uniform(grid(16));
        let l = focal_loss(&h, [3.5, 7.5], 0.0, 1e-3).unwrap();
        assert!((l - 256f64.ln()).abs() < 1e-12);
        assert!((l - 5.545).abs() < 1e-3);
    }

    #[test]
    fn focal_gamma_two_half_mass() {
        // −(1 − 0.5)² ln 0.5 = 0.25 ln 2
        let h = Heatmap::new(grid(2), vec![0.5, 0.5 / 3.0, 0.5 / 3.0, 0.5 / 3.0]).unwrap();
        let l = focal_loss(&h, [0.5, 0.5], 2.0, 1e-3).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn focal_rejects_goal_off_grid() {
        let h = Heatmap::uniform(grid(4));
        assert!(matches!(focal_loss(&h, [9.0, 0.0], 2.0, 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn kl_examples() {
        let g = GridSpec {
            nx: 2,
            ny: 2,
            origin: [0.0, 0.0],
            cell_size: 1.0,
        };
        let t = Heatmap::new(g, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let s = Heatmap::new(g, vec![0.25, 0.75, 0.0, 0.0]).unwrap();
        // Empty cells contribute ε·ln(ε/ε) = 0.
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let v = kl_divergence(&t, &s, 1e-8).unwrap();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.14384).abs() < 1e-5);
        assert!(kl_divergence(&t, &t, 1e-8).unwrap().abs() < 1e-9);
        let u = Heatmap::uniform(grid(5));
        assert!(kl_divergence(&u, &u, 1e-8).unwrap().abs() < 1e-9);
        assert!(kl_divergence(&u, &t, 1e-8).is_err());
    }

    #[test]
    fn splat_is_normalised_and_centred() {
        let g = grid(16);
        let t = splat_target(&g, [8.2, 8.9], 1.0).unwrap();
        let total: f64 = t.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let (best, _) = t
            .iter()
            .copied()
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(best, 8 * 16 + 8);
        let point = splat_target(&g, [8.2, 8.9], 1e-3).unwrap();
        assert_eq!(point, vec![(136, 1.0)]);
    }
}
