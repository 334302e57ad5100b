//! Linear-regime characterization (placeholder).
pub struct LinearFit;
pub fn linear_characterization() -> LinearFit { LinearFit }
