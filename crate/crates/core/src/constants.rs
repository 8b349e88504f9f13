//! Physical constants (CODATA 2018) and the nuclear species registry.

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Vacuum permeability, T m / A.
pub const MU_0: f64 = 1.256_637_062_12e-6;
/// Electron gyromagnetic ratio |γ_e|/2π = g_s μ_B / h, Hz/T.
pub const GAMMA_ELECTRON: f64 = 28.024_951_4242e9;

/// γ/2π in Hz/T for the nuclear species known to the registry.
pub fn species_gamma(tag: &str) -> Option<f64> {
    let g = match tag {
        "1H" | "H" => 42.577_478_518e6,
        "13C" | "C" => 10.708_398_4e6,
        "15N" | "N" => -4.316_424e6,
        "19F" | "F" => 40.077_6e6,
        "31P" | "P" => 17.235_2e6,
        _ => return None,
    };
    Some(g)
}

pub const GAMMA_H: f64 = 42.577_478_518e6;
pub const GAMMA_C: f64 = 10.708_398_4e6;
pub const GAMMA_N: f64 = -4.316_424e6;
pub const GAMMA_F: f64 = 40.077_6e6;
pub const GAMMA_P: f64 = 17.235_2e6;
