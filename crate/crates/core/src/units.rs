//! Fixed conversion constants used at every unit boundary.

/// Coulomb constant e²/(4πε₀) in eV·Å/e².
pub const COULOMB_EV_ANGSTROM: f64 = 14.399645;

/// 1 amu·Å²/fs² expressed in eV.
pub const AMU_A2_PER_FS2_TO_EV: f64 = 103.642691;

/// 1 eV/Å³ in GPa.
pub const EV_PER_A3_TO_GPA: f64 = 160.21766;

/// 1 eV/Å² in J/m².
pub const EV_PER_A2_TO_J_PER_M2: f64 = 16.021766;

/// Seconds per hour, for C-rate conversion.
pub const SECONDS_PER_HOUR: f64 = 3600.0;
