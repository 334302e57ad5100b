//! Ladder assembly and implicit-trapezoidal time stepping.
//!
//! Unknowns are node phases: per cell the two ladder nodes plus three
//! internal series-arm nodes (between the arm junctions and ahead of
//! l_add), giving 4N+1 nodes at half-bandwidth 4 in the natural ordering.
//! The first-order form is φ̇ = w, M·(Φ₀/2π)·ẇ = f(φ, w, t) with M the
//! nodal capacitance matrix and f the Josephson/resistive/source currents;
//! each trapezoidal step solves the nonlinear system in w by a chord
//! Newton iteration over a banded LU of the step Jacobian.

use super::banded::BandedMatrix;
use super::{DeviceRealization, DriveSet, TransientConfig, TransientError, Waveform};
use crate::constants::RFQ;
use crate::snail::{operating_point, snail_zero_phase, DeviceSpec};

const BAND: usize = 4;
/// Steps between scheduled Jacobian refreshes; the junction cosines move
/// only a few percent over this span at the default dt.
const JAC_INTERVAL: usize = 16;
/// Steps between exact (libm) re-anchoring of the incremental sines.
const TRIG_INTERVAL: usize = 4096;
const MAX_HALVINGS: usize = 4;

/// Taylor sine/cosine of the per-step phase increment; below |d| = 0.1 the
/// truncation sits under one ulp of f64.
#[inline(always)]
fn small_sin_cos(d: f64) -> (f64, f64) {
    let d2 = d * d;
    let s = d
        * (1.0
            + d2 * (-1.0 / 6.0
                + d2 * (1.0 / 120.0 + d2 * (-1.0 / 5040.0 + d2 * (1.0 / 362_880.0)))));
    let c = 1.0
        + d2 * (-0.5
            + d2 * (1.0 / 24.0
                + d2 * (-1.0 / 720.0 + d2 * (1.0 / 40_320.0 + d2 * (-1.0 / 3_628_800.0)))));
    (s, c)
}

struct Junction {
    x: u32,
    y: u32,
    ic: f64,
}

/// Solver work counters, cumulative over a system's lifetime.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub steps: u64,
    pub newton_iters: u64,
    pub factorizations: u64,
    pub halvings: u64,
}

/// Assembled simulation state for one (realization, drive, flux) point.
pub struct LadderSystem {
    pub config: TransientConfig,
    spec: DeviceSpec,
    drive: DriveSet,
    phi_ext: f64,

    n_cells: usize,
    n: usize, // unknown count 4N+1
    junctions: Vec<Junction>,
    /// Loop flux offset per cell (flux_sign·phi_ext).
    offsets: Vec<f64>,
    g_l: f64,    // RFQ / l_add
    g_r: f64,    // RFQ / r_shunt
    g_src: f64,  // RFQ / source_impedance
    g_load: f64, // RFQ / load_impedance
    i_c_ref: f64,

    /// Capacitance matrix rows (pre-multiplied by RFQ), band offsets −4..=4.
    mass_rfq: Vec<[f64; 9]>,

    // State.
    phi: Vec<f64>,
    w: Vec<f64>,
    f_prev: Vec<f64>,
    dw_prev: Vec<f64>,
    dw_prev2: Vec<f64>,
    h_prev: f64,
    h_prev2: f64,

    // Incremental trig anchors, one per junction.
    theta_ref: Vec<f64>,
    sin_ref: Vec<f64>,
    cos_ref: Vec<f64>,
    steps_since_trig: usize,

    // Per-evaluation sin/cos of every junction (written by eval_f).
    sin_cur: Vec<f64>,
    cos_cur: Vec<f64>,

    jac: BandedMatrix,
    jac_h: f64,
    steps_since_jac: usize,
    want_jac_refresh: bool,

    stats: StepStats,

    // Newton-loop scratch.
    scratch_f: Vec<f64>,
    scratch_r: Vec<f64>,
    scratch_phi: Vec<f64>,
    scratch_w: Vec<f64>,
}

impl std::fmt::Debug for LadderSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LadderSystem")
            .field("n_cells", &self.n_cells)
            .field("n_unknowns", &self.n)
            .field("phi_ext", &self.phi_ext)
            .finish_non_exhaustive()
    }
}

/// Builds the node-flux equation set for a realized device under `drive`
/// at external flux phase `phi_ext`, with the initial state at the static
/// equilibrium (all drives ramp from zero).
pub fn assemble_system(
    realization: &DeviceRealization,
    drive: &DriveSet,
    config: &TransientConfig,
    phi_ext: f64,
) -> Result<LadderSystem, TransientError> {
    validate(realization, drive, config)?;
    let n_cells = realization.cells.len();
    let n = 4 * n_cells + 1;
    let spec = realization.spec;

    let mut junctions = Vec::with_capacity(4 * n_cells);
    let mut offsets = Vec::with_capacity(n_cells);
    let mut mass = vec![[0.0_f64; 9]; n];

    fn add_cap(mass: &mut [[f64; 9]], x: usize, y: usize, c: f64) {
        let d = y as isize - x as isize;
        mass[x][4] += c;
        mass[y][4] += c;
        mass[x][(4 + d) as usize] -= c;
        mass[y][(4 - d) as usize] -= c;
    }

    // Intrinsic junction capacitance shares: small junction r/(1+r) of the
    // pool, each arm junction 1/(3(1+r)), scaled by the junction's actual
    // critical current relative to nominal.
    let share_small = spec.r / (1.0 + spec.r);
    let share_big = 1.0 / (3.0 * (1.0 + spec.r));

    for (c, cell) in realization.cells.iter().enumerate() {
        let a = 4 * c;
        let (u, v, w3, b) = (a + 1, a + 2, a + 3, a + 4);
        let pairs = [(a, u), (u, v), (v, w3), (a, b)];
        let ics = [cell.big_ics[0], cell.big_ics[1], cell.big_ics[2], cell.small_ic];
        let shares = [share_big, share_big, share_big, share_small];
        let nominals = [spec.i_c, spec.i_c, spec.i_c, spec.r * spec.i_c];
        for k in 0..4 {
            junctions.push(Junction { x: pairs[k].0 as u32, y: pairs[k].1 as u32, ic: ics[k] });
            add_cap(
                &mut mass,
                pairs[k].0,
                pairs[k].1,
                config.c_intrinsic_total * shares[k] * (ics[k] / nominals[k]),
            );
        }
        // Per-cell Josephson capacitance across the whole SNAIL, ground
        // capacitance at the cell's output node.
        add_cap(&mut mass, a, b, spec.c_j);
        mass[b][4] += spec.c_g;
        offsets.push(cell.flux_sign * phi_ext);
    }
    if config.end_half_cg {
        mass[0][4] += 0.5 * spec.c_g;
        mass[n - 1][4] -= 0.5 * spec.c_g;
    }
    for row in &mut mass {
        for v in row.iter_mut() {
            *v *= RFQ;
        }
    }

    let n_junc = junctions.len();
    let mut sys = LadderSystem {
        config: *config,
        spec,
        drive: drive.clone(),
        phi_ext,
        n_cells,
        n,
        junctions,
        offsets,
        g_l: RFQ / spec.l_add,
        g_r: RFQ / config.r_shunt,
        g_src: RFQ / config.source_impedance,
        g_load: RFQ / config.load_impedance,
        i_c_ref: spec.i_c,
        mass_rfq: mass,
        phi: vec![0.0; n],
        w: vec![0.0; n],
        f_prev: vec![0.0; n],
        dw_prev: vec![0.0; n],
        dw_prev2: vec![0.0; n],
        h_prev: 0.0,
        h_prev2: 0.0,
        theta_ref: vec![0.0; n_junc],
        sin_ref: vec![0.0; n_junc],
        cos_ref: vec![1.0; n_junc],
        steps_since_trig: 0,
        sin_cur: vec![0.0; n_junc],
        cos_cur: vec![0.0; n_junc],
        jac: BandedMatrix::new(n, BAND, BAND),
        jac_h: f64::NAN,
        steps_since_jac: 0,
        want_jac_refresh: true,
        stats: StepStats::default(),
        scratch_f: vec![0.0; n],
        scratch_r: vec![0.0; n],
        scratch_phi: vec![0.0; n],
        scratch_w: vec![0.0; n],
    };
    for (c, cell) in realization.cells.iter().enumerate() {
        let delta = snail_zero_phase(cell, phi_ext)?;
        let i_arm = -cell.small_ic * delta.sin();
        let a = 4 * c;
        sys.phi[a + 1] = sys.phi[a] - (i_arm / cell.big_ics[0]).asin();
        sys.phi[a + 2] = sys.phi[a + 1] - (i_arm / cell.big_ics[1]).asin();
        sys.phi[a + 3] = sys.phi[a + 2] - (i_arm / cell.big_ics[2]).asin();
        sys.phi[a + 4] = sys.phi[a] - delta;
    }
    sys.solve_static()?;
    Ok(sys)
}

fn validate(
    realization: &DeviceRealization,
    drive: &DriveSet,
    config: &TransientConfig,
) -> Result<(), TransientError> {
    let cerr = |m: String| Err(TransientError::InvalidConfig(m));
    if realization.cells.is_empty() || realization.cells.len() % 2 != 0 {
        return cerr("realization must have a positive, even cell count".into());
    }
    if !(config.dt > 0.0) {
        return cerr(format!("dt must be positive, got {}", config.dt));
    }
    // ≥64 samples per period of every tone's third harmonic (the binding
    // case is the pump's THG at 3·f_p).
    let dt_max = 1.0 / (192.0 * drive.f_max());
    if config.dt > dt_max * (1.0 + 1e-9) {
        return cerr(format!(
            "dt = {} exceeds 1/(64·3·f_max) = {dt_max:.3e} for this drive",
            config.dt
        ));
    }
    if drive.f_grid <= 0.0 {
        return cerr("drive tones share no common frequency grid".into());
    }
    let periods = config.t_window * drive.f_grid;
    if (periods - periods.round()).abs() > 1e-6 || periods < 0.5 {
        return cerr(format!(
            "t_window = {} s is not an integer multiple of 1/f_grid = {} s",
            config.t_window,
            1.0 / drive.f_grid
        ));
    }
    let samples = config.t_window / config.dt;
    if (samples - samples.round()).abs() > 1e-6 {
        return cerr(format!("t_window/dt = {samples} is not an integer sample count"));
    }
    if config.t_ramp < 0.0 || config.settle_transits < 0.0 {
        return cerr("ramp and settle spans must be nonnegative".into());
    }
    Ok(())
}

impl LadderSystem {
    pub fn n_unknowns(&self) -> usize {
        self.n
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn node_phases(&self) -> &[f64] {
        &self.phi
    }

    /// Phase across cell `c` (ladder node difference).
    pub fn cell_phase(&self, c: usize) -> f64 {
        self.phi[4 * c] - self.phi[4 * c + 4]
    }

    /// Largest static KCL residual in units of i_c.
    pub fn static_residual(&mut self) -> f64 {
        let phi = std::mem::take(&mut self.phi);
        let w = vec![0.0; self.n];
        let mut f = std::mem::take(&mut self.scratch_f);
        self.eval_f(&phi, &w, -1.0, &mut f, true);
        let r = f.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / self.i_c_ref;
        self.phi = phi;
        self.scratch_f = f;
        r
    }

    /// Newton on the static network f(φ, 0) = 0 with the global phase
    /// gauge pinned at node 0. Converges in a couple of iterations from
    /// the per-cell equilibrium guess; also used for adiabatic flux
    /// continuation.
    pub fn solve_static(&mut self) -> Result<(), TransientError> {
        // Tiny l_add values amplify phase roundoff through g_l = RFQ/l_add
        // and stall the iteration above the nominal tolerance; a stalled
        // residual well below any physics tolerance is still accepted.
        let tol = 1e-13;
        let stall_tol = 1e-11;
        let zero_w = vec![0.0; self.n];
        let mut f = vec![0.0; self.n];
        let gauge = self.phi[0];
        let mut best = (f64::INFINITY, Vec::new());
        let mut converged = false;
        for _ in 0..50 {
            let phi = std::mem::take(&mut self.phi);
            self.eval_f(&phi, &zero_w, -1.0, &mut f, true);
            self.phi = phi;
            f[0] = 0.0; // gauge row
            let res = f.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / self.i_c_ref;
            if res < best.0 {
                best = (res, self.phi.clone());
            } else if best.0 < stall_tol {
                self.phi.copy_from_slice(&best.1);
                converged = true;
                break;
            }
            if res < tol {
                converged = true;
                break;
            }
            // P = Σ wgt·Laplacian, gauge row replaced by identity; the
            // Newton update is φ += P⁻¹·f (since ∂f/∂φ = −P).
            self.jac.clear();
            for junc in &self.junctions {
                let (x, y) = (junc.x as usize, junc.y as usize);
                let wgt = junc.ic * (self.phi[x] - self.phi[y]).cos();
                if x != 0 {
                    self.jac.add(x, x, wgt);
                    self.jac.add(x, y, -wgt);
                }
                if y != 0 {
                    self.jac.add(y, y, wgt);
                    self.jac.add(y, x, -wgt);
                }
            }
            for c in 0..self.n_cells {
                let (w3, b) = (4 * c + 3, 4 * c + 4);
                self.jac.add(w3, w3, self.g_l);
                self.jac.add(b, b, self.g_l);
                self.jac.add(w3, b, -self.g_l);
                self.jac.add(b, w3, -self.g_l);
            }
            self.jac.add(0, 0, 1.0);
            self.jac.factor().map_err(|column| TransientError::SingularSystem { column })?;
            self.jac.solve(&mut f);
            for (p, d) in self.phi.iter_mut().zip(&f) {
                *p += d;
            }
            self.phi[0] = gauge;
        }
        if !converged {
            let residual = self.static_residual();
            return Err(TransientError::NewtonDivergence {
                time: 0.0,
                worst_node: 0,
                residual,
                halvings: 0,
            });
        }
        self.anchor_trig_exact();
        self.want_jac_refresh = true;
        self.w.fill(0.0);
        self.dw_prev.fill(0.0);
        self.dw_prev2.fill(0.0);
        self.h_prev = 0.0;
        self.h_prev2 = 0.0;
        let phi = std::mem::take(&mut self.phi);
        let mut f0 = std::mem::take(&mut self.f_prev);
        self.eval_f(&phi, &zero_w, 0.0, &mut f0, true);
        self.phi = phi;
        self.f_prev = f0;
        Ok(())
    }

    /// Moves the external flux and re-solves the statics by continuation
    /// from the current phases (adiabatic flux stepping).
    pub fn set_flux_and_resettle(&mut self, phi_ext: f64) -> Result<(), TransientError> {
        self.phi_ext = phi_ext;
        let mut sign = 1.0;
        for off in self.offsets.iter_mut() {
            *off = sign * phi_ext;
            sign = -sign;
        }
        self.solve_static()
    }

    fn anchor_trig_exact(&mut self) {
        for (j, junc) in self.junctions.iter().enumerate() {
            let theta = self.phi[junc.x as usize] - self.phi[junc.y as usize];
            let (s, c) = theta.sin_cos();
            self.theta_ref[j] = theta;
            self.sin_ref[j] = s;
            self.cos_ref[j] = c;
        }
        self.steps_since_trig = 0;
    }

    /// KCL currents into every node from the non-capacitive elements;
    /// leaves each junction's sin/cos in `sin_cur`/`cos_cur`.
    fn eval_f(&mut self, phi: &[f64], w: &[f64], t: f64, out: &mut [f64], exact: bool) {
        out.fill(0.0);
        let g_r = self.g_r;
        let force_exact = exact || self.config.exact_trig;
        for (j, junc) in self.junctions.iter().enumerate() {
            let (x, y) = (junc.x as usize, junc.y as usize);
            let theta = phi[x] - phi[y];
            let (s, c);
            if force_exact {
                (s, c) = theta.sin_cos();
            } else {
                let d = theta - self.theta_ref[j];
                if d.abs() <= 0.1 {
                    let (sd, cd) = small_sin_cos(d);
                    s = self.sin_ref[j] * cd + self.cos_ref[j] * sd;
                    c = self.cos_ref[j] * cd - self.sin_ref[j] * sd;
                } else {
                    (s, c) = theta.sin_cos();
                }
            }
            self.sin_cur[j] = s;
            self.cos_cur[j] = c;
            let i_b = junc.ic * s + g_r * (w[x] - w[y]);
            out[x] -= i_b;
            out[y] += i_b;
        }
        for c in 0..self.n_cells {
            let (w3, b) = (4 * c + 3, 4 * c + 4);
            let i_l = self.g_l * (phi[w3] - phi[b] - self.offsets[c]);
            out[w3] -= i_l;
            out[b] += i_l;
        }
        let vs = self.drive.v_source(t, self.config.t_ramp);
        out[0] += (vs / RFQ - w[0]) * self.g_src;
        let last = self.n - 1;
        out[last] -= self.g_load * w[last];
    }

    /// Step Jacobian M·RFQ + (h²/4)·Σ(ic·cosθ or g_l)·L + (h/2)·Σ g·L,
    /// assembled from the most recent evaluation's cosines and factored.
    fn refresh_jacobian(&mut self, h: f64) -> Result<(), TransientError> {
        self.jac.clear();
        for i in 0..self.n {
            let row = self.mass_rfq[i];
            let lo = i.saturating_sub(4);
            let hi = (i + 4).min(self.n - 1);
            for jcol in lo..=hi {
                let m = row[4 + jcol - i];
                if m != 0.0 {
                    self.jac.add(i, jcol, m);
                }
            }
        }
        let q = 0.25 * h * h;
        let r2 = 0.5 * h * self.g_r;
        for (j, junc) in self.junctions.iter().enumerate() {
            let (x, y) = (junc.x as usize, junc.y as usize);
            let wgt = q * junc.ic * self.cos_cur[j] + r2;
            self.jac.add(x, x, wgt);
            self.jac.add(y, y, wgt);
            self.jac.add(x, y, -wgt);
            self.jac.add(y, x, -wgt);
        }
        let wl = q * self.g_l;
        for c in 0..self.n_cells {
            let (w3, b) = (4 * c + 3, 4 * c + 4);
            self.jac.add(w3, w3, wl);
            self.jac.add(b, b, wl);
            self.jac.add(w3, b, -wl);
            self.jac.add(b, w3, -wl);
        }
        self.jac.add(0, 0, 0.5 * h * self.g_src);
        self.jac.add(self.n - 1, self.n - 1, 0.5 * h * self.g_load);
        self.jac.factor().map_err(|column| TransientError::SingularSystem { column })?;
        self.stats.factorizations += 1;
        self.jac_h = h;
        self.steps_since_jac = 0;
        self.want_jac_refresh = false;
        Ok(())
    }

    /// Re-anchors the incremental sines at the accepted phases.
    fn commit_trig(&mut self) {
        self.steps_since_trig += 1;
        if self.steps_since_trig >= TRIG_INTERVAL {
            self.anchor_trig_exact();
            return;
        }
        for (j, junc) in self.junctions.iter().enumerate() {
            let theta = self.phi[junc.x as usize] - self.phi[junc.y as usize];
            let d = theta - self.theta_ref[j];
            let (s, c) = if d.abs() <= 0.1 {
                let (sd, cd) = small_sin_cos(d);
                (
                    self.sin_ref[j] * cd + self.cos_ref[j] * sd,
                    self.cos_ref[j] * cd - self.sin_ref[j] * sd,
                )
            } else {
                theta.sin_cos()
            };
            self.sin_ref[j] = s;
            self.cos_ref[j] = c;
            self.theta_ref[j] = theta;
        }
    }

    /// One trapezoidal step from the current state at time `t0` with step
    /// `h`; on Newton failure the step is halved up to [`MAX_HALVINGS`]
    /// levels (the expected signature deep in the saturation regime).
    fn advance(&mut self, t0: f64, h: f64, depth: usize) -> Result<(), TransientError> {
        match self.try_step(t0, h) {
            Ok(()) => Ok(()),
            Err((worst_node, residual)) => {
                if depth >= MAX_HALVINGS {
                    return Err(TransientError::NewtonDivergence {
                        time: t0,
                        worst_node,
                        residual,
                        halvings: depth,
                    });
                }
                self.want_jac_refresh = true;
                self.stats.halvings += 1;
                self.advance(t0, 0.5 * h, depth + 1)?;
                self.advance(t0 + 0.5 * h, 0.5 * h, depth + 1)
            }
        }
    }

    fn try_step(&mut self, t0: f64, h: f64) -> Result<(), (usize, f64)> {
        let n = self.n;
        let t1 = t0 + h;
        let tol = self.config.newton_tol * self.i_c_ref * h;

        let mut w_next = std::mem::take(&mut self.scratch_w);
        let mut phi_next = std::mem::take(&mut self.scratch_phi);
        let mut f_new = std::mem::take(&mut self.scratch_f);
        let mut r = std::mem::take(&mut self.scratch_r);

        // Extrapolation predictor: quadratic through the last three
        // states at uniform h, linear otherwise.
        if self.h_prev == h && self.h_prev2 == h {
            for i in 0..n {
                w_next[i] = self.w[i] + 2.0 * self.dw_prev[i] - self.dw_prev2[i];
            }
        } else {
            let pred = if self.h_prev > 0.0 { h / self.h_prev } else { 0.0 };
            for i in 0..n {
                w_next[i] = self.w[i] + pred * self.dw_prev[i];
            }
        }

        let mut result = Err((0, f64::INFINITY));
        for iter in 0..self.config.max_newton_iters {
            for i in 0..n {
                phi_next[i] = self.phi[i] + 0.5 * h * (self.w[i] + w_next[i]);
            }
            self.eval_f(&phi_next, &w_next, t1, &mut f_new, false);

            // R = M_rfq·(w_next − w) − (h/2)·(f_new + f_prev)
            let mut worst = 0.0_f64;
            let mut worst_node = 0;
            for i in 0..n {
                let row = &self.mass_rfq[i];
                let lo = i.saturating_sub(4);
                let hi = (i + 4).min(n - 1);
                let mut acc = 0.0;
                for j in lo..=hi {
                    acc += row[4 + j - i] * (w_next[j] - self.w[j]);
                }
                let ri = acc - 0.5 * h * (f_new[i] + self.f_prev[i]);
                r[i] = ri;
                let a = ri.abs();
                if a > worst {
                    worst = a;
                    worst_node = i;
                }
            }

            if worst <= tol {
                self.stats.steps += 1;
                self.stats.newton_iters += iter as u64 + 1;
                std::mem::swap(&mut self.phi, &mut phi_next);
                std::mem::swap(&mut self.dw_prev, &mut self.dw_prev2);
                for i in 0..n {
                    self.dw_prev[i] = w_next[i] - self.w[i];
                }
                std::mem::swap(&mut self.w, &mut w_next);
                std::mem::swap(&mut self.f_prev, &mut f_new);
                self.h_prev2 = self.h_prev;
                self.h_prev = h;
                self.commit_trig();
                self.steps_since_jac += 1;
                if iter >= 4 {
                    self.want_jac_refresh = true;
                }
                result = Ok(());
                break;
            }
            result = Err((worst_node, worst / (self.i_c_ref * h)));

            if self.want_jac_refresh
                || self.jac_h != h
                || self.steps_since_jac >= JAC_INTERVAL
                || iter == self.config.max_newton_iters / 2
            {
                if self.refresh_jacobian(h).is_err() {
                    break;
                }
            }
            self.jac.solve(&mut r);
            for i in 0..n {
                w_next[i] -= r[i];
            }
        }

        self.scratch_w = w_next;
        self.scratch_phi = phi_next;
        self.scratch_f = f_new;
        self.scratch_r = r;
        result
    }

    /// Line transit time N·√(L_cell·C_g) at this flux, from the nominal
    /// device parameters.
    pub fn transit_time(&self) -> Result<f64, TransientError> {
        let op = operating_point(&self.spec, self.phi_ext)?;
        Ok(self.n_cells as f64 * (op.l_cell * self.spec.c_g).sqrt())
    }
}

/// Integrates to steady state and returns the analysis-window waveform.
/// Discards the drive ramp plus `settle_transits` line transit times, then
/// records exactly t_window/dt samples of the input and output node
/// voltages.
pub fn run_transient(sys: &mut LadderSystem) -> Result<Waveform, TransientError> {
    let dt = sys.config.dt;
    let n_ramp = (sys.config.t_ramp / dt).ceil() as usize;
    let transit = sys.transit_time()?;
    let n_settle = (sys.config.settle_transits * transit / dt).ceil() as usize;
    let n_pre = n_ramp + n_settle;
    let n_win = (sys.config.t_window / dt).round() as usize;

    let mut v_in = Vec::with_capacity(n_win);
    let mut v_out = Vec::with_capacity(n_win);
    for step in 0..(n_pre + n_win) {
        let t0 = step as f64 * dt;
        sys.advance(t0, dt, 0)?;
        if step >= n_pre {
            v_in.push(RFQ * sys.w[0]);
            v_out.push(RFQ * sys.w[sys.n - 1]);
        }
    }
    Ok(Waveform {
        dt,
        t_start: (n_pre + 1) as f64 * dt,
        v_in,
        v_out,
        f_grid: sys.drive.f_grid,
        source_impedance: sys.config.source_impedance,
        load_impedance: sys.config.load_impedance,
        phi_ext: sys.phi_ext,
        drive: sys.drive.clone(),
        t_ramp: sys.config.t_ramp,
    })
}
