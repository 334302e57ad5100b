//! Time-domain simulation of the N-cell nonlinear ladder.
//!
//! The equivalent circuit is the full device: per cell one SNAIL (four
//! Josephson junctions with intrinsic capacitance and a large shunt
//! resistance for numerical damping, plus the loop-completing inductance
//! l_add), the per-cell Josephson capacitance across the SNAIL, and the
//! ground capacitance at the output node; resistive source and load
//! terminate the ladder. External flux enters each loop as a constant
//! phase offset with the cell's alternating polarity. Integration is
//! implicit trapezoidal with a chord-Newton solve per step over a banded
//! Jacobian.

mod banded;
mod linear;
mod system;

pub use linear::{linear_characterization, LinearFit};
pub use system::{assemble_system, run_transient, LadderSystem, StepStats};

use crate::snail::{SnailError, SnailGeometry};
use crate::{cme::DriveSpec, constants::dbm_to_watts, DeviceSpec};
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransientError {
    #[error("invalid transient configuration: {0}")]
    InvalidConfig(String),
    #[error("singular system matrix at column {column}")]
    SingularSystem { column: usize },
    #[error(
        "newton iteration failed at t = {time:.4e} s (worst node {worst_node}, residual {residual:.3e}·i_c) after {halvings} step halvings"
    )]
    NewtonDivergence { time: f64, worst_node: usize, residual: f64, halvings: usize },
    #[error(transparent)]
    Snail(#[from] SnailError),
}

/// Critical-current disorder description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderSpec {
    /// Relative standard deviation δ/⟨I⟩ of every junction's critical
    /// current (0 to 0.15 in the study; hard limit 0.5).
    pub spread: f64,
    /// Seed of the (fixed, documented) PRNG stream.
    pub seed: u64,
    /// Redraw boundary in units of σ.
    pub truncation: f64,
    /// Systematic middle-junction shrinkage a₁/a₂ applied to the nominal
    /// arm currents before the random spread; `None` keeps the three arm
    /// junctions identical (the configuration used for the disorder maps).
    pub middle_asymmetry: Option<f64>,
}

impl DisorderSpec {
    pub fn new(spread: f64, seed: u64) -> Result<Self, TransientError> {
        if !(0.0..=0.5).contains(&spread) {
            return Err(TransientError::InvalidConfig(format!(
                "spread must lie in [0, 0.5], got {spread}"
            )));
        }
        Ok(Self { spread, seed, truncation: 3.0, middle_asymmetry: None })
    }
}

/// A concrete device: per-junction critical currents for every cell, with
/// alternating flux polarity, plus the provenance that produced it.
#[derive(Debug, Clone)]
pub struct DeviceRealization {
    pub cells: Vec<SnailGeometry>,
    pub spec: DeviceSpec,
    pub disorder: DisorderSpec,
}

/// Standard normal deviate via Box–Muller on explicit 53-bit uniforms;
/// spelled out here (rather than through a distributions crate) so the
/// sampled devices are reproducible from the seed alone, on any platform,
/// for the lifetime of the file format.
fn standard_normal(rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn truncated_normal(rng: &mut rand_chacha::ChaCha12Rng, truncation: f64) -> f64 {
    loop {
        let z = standard_normal(rng);
        if z.abs() <= truncation {
            return z;
        }
    }
}

/// Samples a disordered device: every junction current drawn independently
/// from Normal(nominal, spread·nominal), redrawn outside ±truncation·σ.
///
/// Draw order is cell-major, junction-minor (arm 1, arm 2, arm 3, small),
/// one truncated normal per junction, so a fixed seed pins the whole
/// device. With spread = 0 the draws still advance the stream but every
/// junction is exactly nominal, which keeps a given seed's underlying
/// deviates shared across a spread ladder.
pub fn sample_device(spec: &DeviceSpec, disorder: &DisorderSpec) -> DeviceRealization {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(disorder.seed);
    let nominal_bigs = match disorder.middle_asymmetry {
        Some(ratio) => {
            let g = SnailGeometry::real(spec, ratio, 1.0);
            g.big_ics
        }
        None => [spec.i_c; 3],
    };
    let small_nominal = spec.r * spec.i_c;
    let mut cells = Vec::with_capacity(spec.n_cells);
    for c in 0..spec.n_cells {
        let flux_sign = if c % 2 == 0 { 1.0 } else { -1.0 };
        let mut draw = |mean: f64| {
            let z = truncated_normal(&mut rng, disorder.truncation);
            mean * (1.0 + disorder.spread * z)
        };
        let big_ics = [draw(nominal_bigs[0]), draw(nominal_bigs[1]), draw(nominal_bigs[2])];
        let small_ic = draw(small_nominal);
        cells.push(
            SnailGeometry::new(big_ics, small_ic, spec.l_add, flux_sign)
                .expect("truncated draws keep currents positive"),
        );
    }
    DeviceRealization { cells, spec: *spec, disorder: *disorder }
}

/// Transient solver controls. All fields have defaults matching the
/// reference reproduction setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientConfig {
    /// Base time step in seconds.
    pub dt: f64,
    /// Raised-cosine drive ramp span in seconds.
    pub t_ramp: f64,
    /// Steady-state analysis window in seconds; must be an exact integer
    /// multiple of 1/f_grid of the drive.
    pub t_window: f64,
    /// Settling span between ramp and window, in line transit times.
    pub settle_transits: f64,
    /// Newton residual tolerance in units of the nominal i_c.
    pub newton_tol: f64,
    /// Newton iteration limit per step before the step is halved.
    pub max_newton_iters: usize,
    /// Source (generator) impedance in ohms.
    pub source_impedance: f64,
    /// Load impedance in ohms.
    pub load_impedance: f64,
    /// Per-junction shunt resistance in ohms (numerical damping of
    /// internal plasma modes; keeps in-band loss below 0.01 dB).
    pub r_shunt: f64,
    /// Total intrinsic junction capacitance per SNAIL in farads, split
    /// over the junctions in proportion to their critical currents.
    pub c_intrinsic_total: f64,
    /// Evaluate junction sines with libm on every call instead of the
    /// incremental rotation path (validation/debugging only; ~2× slower).
    pub exact_trig: bool,
    /// Split the end ground capacitances (C_g/2 extra at node 0, C_g/2
    /// less at node N) so the ladder terminates on symmetric Π sections.
    /// Shrinks the discreteness reflection from ~sin(k/2) to its square;
    /// used by the linear characterization, off for the device maps.
    pub end_half_cg: bool,
}

impl Default for TransientConfig {
    fn default() -> Self {
        Self {
            dt: 0.25e-12,
            t_ramp: 5e-9,
            t_window: 10e-9,
            settle_transits: 5.0,
            newton_tol: 1e-12,
            max_newton_iters: 50,
            source_impedance: 50.0,
            load_impedance: 50.0,
            r_shunt: 1e6,
            c_intrinsic_total: 2e-15,
            exact_trig: false,
            end_half_cg: false,
        }
    }
}

/// One drive tone at the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub freq: f64,
    /// Source EMF peak amplitude in volts.
    pub v_peak: f64,
    pub phase: f64,
}

/// The full source program: a set of commensurate tones behind a common
/// raised-cosine ramp. `f_grid` is the greatest common frequency of all
/// tones; every spectral analysis bins on it.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSet {
    pub tones: Vec<Tone>,
    pub f_grid: f64,
}

fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl DriveSet {
    /// Builds a drive from integer-hertz tones. Zero-amplitude tones still
    /// participate in the spectral grid, so pump-on and pump-off runs of
    /// the same drive share identical windows.
    pub fn new(tones: Vec<Tone>) -> Result<Self, TransientError> {
        if tones.is_empty() {
            return Err(TransientError::InvalidConfig("drive needs at least one tone".into()));
        }
        let mut grid: u64 = 0;
        for t in &tones {
            if !(t.freq > 0.0) || (t.freq - t.freq.round()).abs() > 1e-6 {
                return Err(TransientError::InvalidConfig(format!(
                    "tone frequencies must be positive integer hertz, got {}",
                    t.freq
                )));
            }
            grid = gcd_u64(grid, t.freq.round() as u64);
        }
        Ok(Self { tones, f_grid: grid as f64 })
    }

    /// Source voltage amplitude for a quoted available power: V = 2·√(2·Z₀·P),
    /// so that the power delivered to a matched load equals `p_dbm`.
    pub fn source_volts(p_dbm: f64, z_source: f64) -> f64 {
        2.0 * (2.0 * z_source * dbm_to_watts(p_dbm)).sqrt()
    }

    /// Pump + signal program of the measurement protocol. `pump_on` false
    /// zeroes the pump amplitude without changing the spectral grid.
    pub fn from_drive_spec(
        drive: &DriveSpec,
        z_source: f64,
        pump_on: bool,
        signal_on: bool,
    ) -> Result<Self, TransientError> {
        let v_pump =
            if pump_on { Self::source_volts(drive.p_pump_dbm, z_source) } else { 0.0 };
        let v_sig =
            if signal_on { Self::source_volts(drive.p_signal_dbm, z_source) } else { 0.0 };
        Self::new(vec![
            Tone { freq: drive.f_pump, v_peak: v_pump, phase: 0.0 },
            Tone { freq: drive.f_signal, v_peak: v_sig, phase: 0.0 },
        ])
    }

    /// Maximum tone frequency (sets the dt constraint together with the
    /// pump harmonics).
    pub fn f_max(&self) -> f64 {
        self.tones.iter().fold(0.0, |m, t| m.max(t.freq))
    }

    /// Instantaneous source EMF.
    #[inline]
    pub fn v_source(&self, t: f64, t_ramp: f64) -> f64 {
        let env = if t <= 0.0 {
            0.0
        } else if t < t_ramp {
            0.5 * (1.0 - (std::f64::consts::PI * t / t_ramp).cos())
        } else {
            1.0
        };
        if env == 0.0 {
            return 0.0;
        }
        let mut v = 0.0;
        for tone in &self.tones {
            if tone.v_peak != 0.0 {
                v += tone.v_peak * (std::f64::consts::TAU * tone.freq * t + tone.phase).sin();
            }
        }
        env * v
    }
}

/// Steady-state node voltages over the analysis window, with enough
/// metadata to reconstruct source current and spectral binning.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub dt: f64,
    /// Absolute time of the first sample.
    pub t_start: f64,
    /// Voltage at the input node (node 0).
    pub v_in: Vec<f64>,
    /// Voltage at the output node (node N).
    pub v_out: Vec<f64>,
    pub f_grid: f64,
    pub source_impedance: f64,
    pub load_impedance: f64,
    pub phi_ext: f64,
    pub drive: DriveSet,
    pub t_ramp: f64,
}

impl Waveform {
    pub fn n_samples(&self) -> usize {
        self.v_in.len()
    }

    /// Source EMF at sample `k` (for power bookkeeping).
    pub fn v_source_at(&self, k: usize) -> f64 {
        self.drive.v_source(self.t_start + k as f64 * self.dt, self.t_ramp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref_disorder(spread: f64, seed: u64) -> DisorderSpec {
        DisorderSpec::new(spread, seed).unwrap()
    }

    #[test]
    fn zero_spread_is_exactly_nominal() {
        let spec = DeviceSpec::reference();
        let real = sample_device(&spec, &ref_disorder(0.0, 123));
        assert_eq!(real.cells.len(), 700);
        for (c, cell) in real.cells.iter().enumerate() {
            assert_eq!(cell.big_ics, [spec.i_c; 3]);
            assert_eq!(cell.small_ic, spec.r * spec.i_c);
            assert_eq!(cell.flux_sign, if c % 2 == 0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let spec = DeviceSpec::reference();
        let a = sample_device(&spec, &ref_disorder(0.05, 1));
        let b = sample_device(&spec, &ref_disorder(0.05, 1));
        let c = sample_device(&spec, &ref_disorder(0.05, 2));
        assert_eq!(a.cells, b.cells);
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn spread_15pct_statistics() {
        let spec = DeviceSpec::reference();
        let real = sample_device(&spec, &ref_disorder(0.15, 7));
        let bigs: Vec<f64> = real.cells.iter().flat_map(|c| c.big_ics).collect();
        assert_eq!(bigs.len(), 2100);
        assert!(bigs.iter().all(|&i| i > 0.0));
        let mean = bigs.iter().sum::<f64>() / bigs.len() as f64;
        let var = bigs.iter().map(|i| (i - mean).powi(2)).sum::<f64>() / bigs.len() as f64;
        let std_rel = var.sqrt() / mean;
        assert!(
            (std_rel - 0.15).abs() < 0.015,
            "empirical relative std {std_rel} vs 0.15"
        );
        // Statistical consistency of the sample mean.
        let n = bigs.len() as f64;
        assert!((mean - spec.i_c).abs() / spec.i_c < 5.0 * 0.15 / n.sqrt());
    }

    #[test]
    fn middle_asymmetry_shifts_nominal_means() {
        let spec = DeviceSpec::reference();
        let mut d = ref_disorder(0.0, 0);
        d.middle_asymmetry = Some(1.3);
        let real = sample_device(&spec, &d);
        let cell = &real.cells[0];
        assert!((cell.big_ics[0] / cell.big_ics[1] - 1.3).abs() < 1e-12);
        let mean = (cell.big_ics[0] + cell.big_ics[1] + cell.big_ics[2]) / 3.0;
        assert!((mean - spec.i_c).abs() < 1e-12 * spec.i_c);
    }

    #[test]
    fn drive_set_grid_and_source() {
        let drive = DriveSpec::reference(-74.0);
        let set = DriveSet::from_drive_spec(&drive, 50.0, true, true).unwrap();
        assert_eq!(set.f_grid, 100e6);
        assert_eq!(set.f_max(), 4e9);
        // Available power calibration: V²/(8·Z₀) = P.
        let v = DriveSet::source_volts(-74.0, 50.0);
        let p = v * v / (8.0 * 50.0);
        assert!((10.0 * (p / 1e-3).log10() + 74.0).abs() < 1e-9);
        // Ramp envelope: zero at t=0, one past the ramp.
        assert_eq!(set.v_source(0.0, 5e-9), 0.0);
        let off = DriveSet::from_drive_spec(&drive, 50.0, false, true).unwrap();
        assert_eq!(off.f_grid, 100e6, "pump-off keeps the same grid");
        assert_eq!(off.tones[0].v_peak, 0.0);
    }

    #[test]
    fn disorder_validation() {
        assert!(DisorderSpec::new(0.6, 0).is_err());
        assert!(DisorderSpec::new(-0.1, 0).is_err());
        assert!(DisorderSpec::new(0.15, 0).is_ok());
    }
}
