//! SNAIL device model.
//!
//! A SNAIL cell is a loop of three large Josephson junctions (critical
//! current `i_c` each) in parallel with one small junction (`r·i_c`),
//! threaded by an external flux. On the quasi-static branch its
//! current-phase relation is
//!
//! ```text
//! I_L(φ)/I_c = r·sin(φ) + sin((φ − φ_ext)/3)
//! ```
//!
//! and the Taylor expansion about the zero-current phase φ* defines the
//! flux-tunable coefficients α̃ (inverse inductance), β̃ (3WM) and γ̃ (4WM)
//! that both simulation engines consume. [`effective_taylor`] recovers the
//! same coefficients numerically for a non-ideal loop (unequal arm
//! junctions, finite loop-completing inductance).

use crate::constants::{E_CHARGE, HBAR, PHI0, RFQ};
use std::f64::consts::TAU;
#[cfg(test)]
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnailError {
    #[error("invalid device spec: {0}")]
    InvalidSpec(String),
    #[error("zero-current phase search did not converge (last residual {residual:.3e})")]
    PhiStarDiverged { residual: f64 },
    #[error(
        "no quasi-static arm solution: required arm phase {required:.6} exceeds branch range ±{limit:.6}"
    )]
    BranchExceeded { required: f64, limit: f64 },
    #[error("taylor order {0} outside 1..=4")]
    BadTaylorOrder(usize),
}

/// Nominal circuit parameters of the TWPA; the single source of truth for
/// both engines. All quantities SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceSpec {
    /// Number of unit cells (even; adjacent cells see opposite flux).
    pub n_cells: usize,
    /// Large-junction critical current in amperes.
    pub i_c: f64,
    /// Small/large junction critical-current ratio.
    pub r: f64,
    /// Per-cell Josephson capacitance in farads.
    pub c_j: f64,
    /// Per-cell ground capacitance in farads.
    pub c_g: f64,
    /// Loop-completing inductance in henries.
    pub l_add: f64,
}

impl DeviceSpec {
    pub fn new(
        n_cells: usize,
        i_c: f64,
        r: f64,
        c_j: f64,
        c_g: f64,
        l_add: f64,
    ) -> Result<Self, SnailError> {
        let err = |m: String| Err(SnailError::InvalidSpec(m));
        if n_cells == 0 || n_cells % 2 != 0 {
            return err(format!("n_cells must be positive and even, got {n_cells}"));
        }
        for (name, v) in [("i_c", i_c), ("c_j", c_j), ("c_g", c_g), ("l_add", l_add)] {
            if !(v > 0.0) || !v.is_finite() {
                return err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(r > 0.0 && r < 1.0 / 3.0) {
            return err(format!(
                "r must lie in (0, 1/3) for the single-minimum SNAIL regime, got {r}"
            ));
        }
        Ok(Self { n_cells, i_c, r, c_j, c_g, l_add })
    }

    /// The device of the reference experiment: 700 cells, I_c = 2.6 µA,
    /// r = 0.08, C_J = 31 fF, C_g = 250 fF, L_add = 1 pH.
    pub fn reference() -> Self {
        Self::new(700, 2.6e-6, 0.08, 31e-15, 250e-15, 1e-12).expect("reference spec is valid")
    }
}

/// Flux-dependent operating point: the zero-current phase, Taylor
/// coefficients of the cell CPR, and the derived per-cell quantities.
#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint {
    /// External flux as a phase, 2π·Φ_ext/Φ₀.
    pub phi_ext: f64,
    /// Zero-current phase of the cell CPR on the branch tracked from zero flux.
    pub phi_star: f64,
    /// Linear coefficient α̃ (dimensionless inverse inductance).
    pub alpha: f64,
    /// Quadratic (3WM) coefficient β̃; odd in flux. Not zeroed here — the
    /// alternating-polarity cancellation is a CME-engine assumption.
    pub beta: f64,
    /// Cubic (4WM) coefficient γ̃; even in flux.
    pub gamma_t: f64,
    /// Reduced 4WM coefficient γ = γ̃/α̃ entering the wave equation.
    pub gamma: f64,
    /// Per-cell inductance Φ₀/(2π·i_c·α̃) in henries.
    pub l_cell: f64,
    /// 3WM coupling rate in rad/s.
    pub g3: f64,
    /// 4WM coupling rate in rad/s, ħg₄ = (γ̃/2α̃)·E_C.
    pub g4: f64,
    /// Characteristic frequency 1/√(l_cell·c_g) in rad/s.
    pub omega_0: f64,
    /// Plasma frequency 1/√(l_cell·c_j) in rad/s.
    pub omega_j: f64,
    /// Line impedance √(l_cell/c_g) in ohms.
    pub z_line: f64,
}

/// Cell CPR residual I_L(φ)/I_c at external flux phase `phi_ext`.
#[inline]
pub fn cpr_residual(r: f64, phi: f64, phi_ext: f64) -> f64 {
    r * phi.sin() + ((phi - phi_ext) / 3.0).sin()
}

/// d/dφ of [`cpr_residual`]; equals α̃ when evaluated at φ*.
#[inline]
fn cpr_slope(r: f64, phi: f64, phi_ext: f64) -> f64 {
    r * phi.cos() + ((phi - phi_ext) / 3.0).cos() / 3.0
}

/// Solves I_L(φ*) = 0 on the branch continuously connected to φ*(0) = 0.
///
/// The branch is tracked by continuation in the external flux with a
/// step-size-limited Newton iteration at each continuation point; this
/// mirrors adiabatic flux tuning of the physical device.
pub fn solve_phi_star(r: f64, phi_ext: f64) -> Result<f64, SnailError> {
    const RES_TOL: f64 = 1e-13;
    const MAX_STEP: f64 = 0.5;
    const CONT_STEP: f64 = 0.1;

    let n_stages = (phi_ext.abs() / CONT_STEP).ceil().max(1.0) as usize;
    let mut phi = 0.0_f64;
    for stage in 1..=n_stages {
        let fe = phi_ext * stage as f64 / n_stages as f64;
        let mut converged = false;
        let mut residual = f64::NAN;
        for _ in 0..60 {
            residual = cpr_residual(r, phi, fe);
            if residual.abs() < RES_TOL {
                converged = true;
                break;
            }
            let slope = cpr_slope(r, phi, fe);
            let step = (residual / slope).clamp(-MAX_STEP, MAX_STEP);
            phi -= step;
        }
        if !converged {
            return Err(SnailError::PhiStarDiverged { residual });
        }
    }
    Ok(phi)
}

/// Builds the full operating point of `spec` at external flux phase
/// `phi_ext` from the analytic Taylor coefficients of the ideal cell CPR.
pub fn operating_point(spec: &DeviceSpec, phi_ext: f64) -> Result<OperatingPoint, SnailError> {
    let phi_star = solve_phi_star(spec.r, phi_ext)?;
    let arm = (phi_star - phi_ext) / 3.0;
    let (sin_s, cos_s) = phi_star.sin_cos();
    let (sin_a, cos_a) = arm.sin_cos();

    let alpha = spec.r * cos_s + cos_a / 3.0;
    let beta = 0.5 * (spec.r * sin_s + sin_a / 9.0);
    let gamma_t = (spec.r * cos_s + cos_a / 27.0) / 6.0;
    let gamma = gamma_t / alpha;

    let l_cell = PHI0 / (TAU * spec.i_c * alpha);
    let omega_0 = 1.0 / (l_cell * spec.c_g).sqrt();
    let omega_j = 1.0 / (l_cell * spec.c_j).sqrt();
    let z_line = (l_cell / spec.c_g).sqrt();

    let e_c = E_CHARGE * E_CHARGE / (2.0 * spec.c_g);
    let e_l = RFQ * RFQ / l_cell;
    let g4 = gamma_t / (2.0 * alpha) * e_c / HBAR;
    // Cubic-term rate in the same single-cell-mode normalization as g₄:
    // ħg₃ = (β̃/3α̃)·(2E_C)^(3/4)·E_L^(1/4).
    let g3 = beta / (3.0 * alpha) * (2.0 * e_c).powf(0.75) * e_l.powf(0.25) / HBAR;

    Ok(OperatingPoint {
        phi_ext,
        phi_star,
        alpha,
        beta,
        gamma_t,
        gamma,
        l_cell,
        g3,
        g4,
        omega_0,
        omega_j,
        z_line,
    })
}

/// One physical SNAIL loop: three series-arm junctions, one small junction,
/// the loop-completing inductance and the cell's flux polarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnailGeometry {
    /// Series-arm critical currents in amperes, in arm order.
    pub big_ics: [f64; 3],
    /// Small-junction critical current in amperes.
    pub small_ic: f64,
    /// Loop-completing inductance in henries.
    pub l_add: f64,
    /// Flux polarity of this cell, ±1.
    pub flux_sign: f64,
}

impl SnailGeometry {
    pub fn new(
        big_ics: [f64; 3],
        small_ic: f64,
        l_add: f64,
        flux_sign: f64,
    ) -> Result<Self, SnailError> {
        if big_ics.iter().chain([&small_ic]).any(|&i| !(i > 0.0) || !i.is_finite()) {
            return Err(SnailError::InvalidSpec(
                "all junction critical currents must be strictly positive".into(),
            ));
        }
        if flux_sign != 1.0 && flux_sign != -1.0 {
            return Err(SnailError::InvalidSpec(format!(
                "flux_sign must be ±1, got {flux_sign}"
            )));
        }
        Ok(Self { big_ics, small_ic, l_add, flux_sign })
    }

    /// Nominal loop of `spec`: three identical arm junctions at `i_c`.
    pub fn ideal(spec: &DeviceSpec, flux_sign: f64) -> Self {
        Self::new([spec.i_c; 3], spec.r * spec.i_c, spec.l_add, flux_sign)
            .expect("ideal geometry from a valid spec")
    }

    /// Loop with the systematic middle-junction shrinkage of the Dolan
    /// fabrication process: side/middle area ratio `a1_over_a2` with the
    /// arm mean held at `i_c`.
    pub fn real(spec: &DeviceSpec, a1_over_a2: f64, flux_sign: f64) -> Self {
        let a2 = 3.0 / (1.0 + 2.0 * a1_over_a2);
        let a1 = a1_over_a2 * a2;
        Self::new(
            [a1 * spec.i_c, a2 * spec.i_c, a1 * spec.i_c],
            spec.r * spec.i_c,
            spec.l_add,
            flux_sign,
        )
        .expect("real geometry from a valid spec")
    }

    pub fn mean_big_ic(&self) -> f64 {
        (self.big_ics[0] + self.big_ics[1] + self.big_ics[2]) / 3.0
    }
}

/// Phase accumulated across the series arm carrying current `i`:
/// Σ asin(i/I_ck) plus the linear drop over l_add.
#[inline]
fn arm_phase(geom: &SnailGeometry, i: f64) -> f64 {
    let mut p = geom.l_add * i / RFQ;
    for &ic in &geom.big_ics {
        p += (i / ic).asin();
    }
    p
}

#[inline]
fn arm_phase_slope(geom: &SnailGeometry, i: f64) -> f64 {
    let mut s = geom.l_add / RFQ;
    for &ic in &geom.big_ics {
        s += 1.0 / (ic * (1.0 - (i / ic) * (i / ic)).sqrt());
    }
    s
}

/// Current through the series arm given the total arm phase `target`,
/// solved on the quasi-static branch (every junction below critical).
fn arm_current(geom: &SnailGeometry, target: f64) -> Result<f64, SnailError> {
    let i_min = geom.big_ics.iter().cloned().fold(f64::INFINITY, f64::min);
    let limit = arm_phase(geom, i_min);
    if !(target.abs() < limit) {
        return Err(SnailError::BranchExceeded { required: target, limit });
    }
    // Safeguarded Newton on the monotone arm relation; the iterate must
    // stay strictly inside ±i_min to keep the asin arguments in domain.
    let (mut lo, mut hi) = (-i_min, i_min);
    let mut i = (target / arm_phase_slope(geom, 0.0)).clamp(-0.999 * i_min, 0.999 * i_min);
    for _ in 0..100 {
        let f = arm_phase(geom, i) - target;
        if f == 0.0 {
            return Ok(i);
        }
        if f > 0.0 {
            hi = i;
        } else {
            lo = i;
        }
        let step = f / arm_phase_slope(geom, i);
        let mut next = i - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - i).abs() <= 1e-16 * i_min {
            return Ok(next);
        }
        i = next;
    }
    Ok(i)
}

/// Current through the SNAIL at total phase `delta` under external flux
/// phase `phi_ext` (scaled by the cell's polarity), on the quasi-static
/// branch. For ideal geometry and l_add → 0 this reduces to
/// I_c·[r·sin δ + sin((δ − s·φ_ext)/3)].
pub fn snail_current(geom: &SnailGeometry, delta: f64, phi_ext: f64) -> Result<f64, SnailError> {
    let arm = arm_current(geom, delta - geom.flux_sign * phi_ext)?;
    Ok(geom.small_ic * delta.sin() + arm)
}

fn snail_current_slope(geom: &SnailGeometry, delta: f64, phi_ext: f64) -> Result<f64, SnailError> {
    let arm = arm_current(geom, delta - geom.flux_sign * phi_ext)?;
    Ok(geom.small_ic * delta.cos() + 1.0 / arm_phase_slope(geom, arm))
}

/// Zero-current phase of [`snail_current`], seeded from the ideal-loop φ*.
pub fn snail_zero_phase(geom: &SnailGeometry, phi_ext: f64) -> Result<f64, SnailError> {
    let r_eff = geom.small_ic / geom.mean_big_ic();
    let mut delta = solve_phi_star(r_eff.min(0.33), geom.flux_sign * phi_ext)?;
    let scale = geom.mean_big_ic();
    for _ in 0..60 {
        let f = snail_current(geom, delta, phi_ext)?;
        if f.abs() < 1e-14 * scale {
            return Ok(delta);
        }
        let slope = snail_current_slope(geom, delta, phi_ext)?;
        delta -= (f / slope).clamp(-0.5, 0.5);
    }
    Err(SnailError::PhiStarDiverged {
        residual: snail_current(geom, delta, phi_ext)? / scale,
    })
}

/// Order-k central difference of `f` about 0 with spacing `h`, for the
/// k-th derivative (second-order accurate).
fn central_diff<F: FnMut(f64) -> Result<f64, SnailError>>(
    order: usize,
    h: f64,
    f: &mut F,
) -> Result<f64, SnailError> {
    Ok(match order {
        1 => (f(h)? - f(-h)?) / (2.0 * h),
        2 => (f(h)? - 2.0 * f(0.0)? + f(-h)?) / (h * h),
        3 => (f(2.0 * h)? - 2.0 * f(h)? + 2.0 * f(-h)? - f(-2.0 * h)?) / (2.0 * h * h * h),
        4 => {
            (f(2.0 * h)? - 4.0 * f(h)? + 6.0 * f(0.0)? - 4.0 * f(-h)? + f(-2.0 * h)?)
                / (h * h * h * h)
        }
        _ => return Err(SnailError::BadTaylorOrder(order)),
    })
}

/// Two-level Richardson extrapolation of the second-order central
/// difference: eliminates the h² and h⁴ error terms.
fn richardson_diff<F: FnMut(f64) -> Result<f64, SnailError>>(
    order: usize,
    h: f64,
    mut f: F,
) -> Result<f64, SnailError> {
    let d1 = central_diff(order, h, &mut f)?;
    let d2 = central_diff(order, 2.0 * h, &mut f)?;
    let d4 = central_diff(order, 4.0 * h, &mut f)?;
    let r1 = (4.0 * d1 - d2) / 3.0;
    let r2 = (4.0 * d2 - d4) / 3.0;
    Ok((16.0 * r1 - r2) / 15.0)
}

/// Taylor coefficients of [`snail_current`] about its zero-current phase,
/// normalized by the mean arm critical current:
///
/// ```text
/// I(δ* + φ)/⟨I_big⟩ ≈ a₁φ + a₂φ² + … + a_order·φ^order
/// ```
///
/// For the ideal loop (a₁, a₂, a₃) = (α̃, −β̃, −γ̃). Base steps are chosen
/// per order so the roundoff floor of the stencil stays below the 10⁻⁶
/// relative target.
pub fn effective_taylor(
    geom: &SnailGeometry,
    phi_ext: f64,
    order: usize,
) -> Result<Vec<f64>, SnailError> {
    if order == 0 || order > 4 {
        return Err(SnailError::BadTaylorOrder(order));
    }
    let delta_star = snail_zero_phase(geom, phi_ext)?;
    let i_ref = geom.mean_big_ic();
    let eval = |phi: f64| Ok(snail_current(geom, delta_star + phi, phi_ext)? / i_ref);

    const BASE_H: [f64; 4] = [1e-3, 2e-3, 6e-3, 2e-2];
    const FACTORIAL: [f64; 4] = [1.0, 2.0, 6.0, 24.0];
    let mut coeffs = Vec::with_capacity(order);
    for k in 1..=order {
        let d = richardson_diff(k, BASE_H[k - 1], eval)?;
        coeffs.push(d / FACTORIAL[k - 1]);
    }
    Ok(coeffs)
}
