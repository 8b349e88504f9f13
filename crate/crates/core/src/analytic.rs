//! Closed-form zero- and near-zero-field spectra of XAₙ systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One X spin coupled with `j_ax` to `n` magnetically equivalent A spins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XAnSpec {
    pub n: usize,
    /// Hz.
    pub j_ax: f64,
    /// γ/2π of the A spins, Hz/T.
    pub gamma_a: f64,
    /// γ/2π of the X spin, Hz/T.
    pub gamma_x: f64,
}

impl XAnSpec {
    pub fn new(n: usize, j_ax: f64, gamma_a: f64, gamma_x: f64) -> Result<Self> {
        let s = XAnSpec {
            n,
            j_ax,
            gamma_a,
            gamma_x,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("XAn needs n >= 1".into()));
        }
        if self.j_ax == 0.0 || !self.j_ax.is_finite() {
            return Err(Error::InvalidArgument("J_AX must be finite and non-zero".into()));
        }
        if !self.gamma_a.is_finite() || !self.gamma_x.is_finite() {
            return Err(Error::InvalidArgument("gyromagnetic ratios must be finite".into()));
        }
        Ok(())
    }

    /// Allowed total A-spin quantum numbers k_A, largest first.
    pub fn k_values(&self) -> Vec<f64> {
        let top = self.n as i64; // 2·(n/2)
        (0..=top / 2).map(|i| (top - 2 * i) as f64 / 2.0).collect()
    }
}

fn twice(x: f64, what: &str) -> Result<i64> {
    let t = 2.0 * x;
    if !t.is_finite() || (t - t.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{what} = {x} is not a half-integer")));
    }
    Ok(t.round() as i64)
}

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// ⟨j₁ m₁; j₂ m₂ | J M⟩ by the Racah formula.
pub fn clebsch_gordan(j1: f64, j2: f64, m1: f64, m2: f64, j: f64, m: f64) -> Result<f64> {
    let (tj1, tj2, tm1, tm2, tj, tm) = (
        twice(j1, "j1")?,
        twice(j2, "j2")?,
        twice(m1, "m1")?,
        twice(m2, "m2")?,
        twice(j, "J")?,
        twice(m, "M")?,
    );
    for (tjj, tmm, name) in [(tj1, tm1, "1"), (tj2, tm2, "2"), (tj, tm, "")] {
        if tjj < 0 || tmm.abs() > tjj || (tjj + tmm) % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid quantum numbers j{name} = {}, m{name} = {}",
                tjj as f64 / 2.0,
                tmm as f64 / 2.0
            )));
        }
    }
    if tj > tj1 + tj2 || tj < (tj1 - tj2).abs() || (tj1 + tj2 + tj) % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "J = {j} violates the triangle rule for j1 = {j1}, j2 = {j2}"
        )));
    }
    if tm != tm1 + tm2 {
        return Ok(0.0);
    }
    // all quantities below are integers
    let a = (tj + tj1 - tj2) / 2;
    let b = (tj - tj1 + tj2) / 2;
    let cc = (tj1 + tj2 - tj) / 2;
    let d = (tj1 + tj2 + tj) / 2 + 1;
    let pre = ((tj + 1) as f64 * factorial(a) * factorial(b) * factorial(cc) / factorial(d)).sqrt()
        * (factorial((tj + tm) / 2)
            * factorial((tj - tm) / 2)
            * factorial((tj1 - tm1) / 2)
            * factorial((tj1 + tm1) / 2)
            * factorial((tj2 - tm2) / 2)
            * factorial((tj2 + tm2) / 2))
            .sqrt();
    let mut sum = 0.0;
    for k in 0..=cc.max(0) {
        let terms = [
            k,
            cc - k,
            (tj1 - tm1) / 2 - k,
            (tj2 + tm2) / 2 - k,
            (tj - tj2 + tm1) / 2 + k,
            (tj - tj1 - tm2) / 2 + k,
        ];
        if terms.iter().any(|&t| t < 0) {
            continue;
        }
        let denom: f64 = terms.iter().map(|&t| factorial(t)).product();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / denom;
    }
    Ok(pre * sum)
}

fn binomial(n: usize, k: i64) -> u64 {
    if k < 0 || k as usize > n {
        return 0;
    }
    let k = (k as usize).min(n - k as usize);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Number of independent k_A multiplets formed by n spin-½ A spins.
pub fn manifold_multiplicity(n: usize, k_a: f64) -> Result<u64> {
    let tk = twice(k_a, "k_A")?;
    if tk < 0 || tk > n as i64 || (n as i64 - tk) % 2 != 0 {
        return Err(Error::InvalidArgument(format!("k_A = {k_a} not allowed for n = {n}")));
    }
    let low = (n as i64 - tk) / 2;
    Ok(binomial(n, low) - binomial(n, low - 1))
}

/// A predicted line with its quantum-number labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLine {
    /// Hz.
    pub freq: f64,
    /// Number of k_A multiplets contributing.
    pub weight: f64,
    pub k_a: f64,
    pub f_upper: f64,
    pub m_upper: f64,
    pub f_lower: f64,
    pub m_lower: f64,
}

fn zero_field_line(spec: &XAnSpec, k_a: f64) -> f64 {
    // ν⁰ = ½J(1 + n − 2k), k = n/2 − k_A
    let k = spec.n as f64 / 2.0 - k_a;
    0.5 * spec.j_ax.abs() * (1.0 + spec.n as f64 - 2.0 * k)
}

/// Zero-field lines ν⁰ = ½J(1+n−2k), one per k_A ≥ ½, weighted by multiplicity.
pub fn zero_field_lines(spec: &XAnSpec) -> Result<Vec<AnalyticLine>> {
    spec.validate()?;
    let mut out = Vec::new();
    for k_a in spec.k_values() {
        if k_a < 0.5 {
            continue;
        }
        let (fu, fl) = upper_lower(spec, k_a);
        out.push(AnalyticLine {
            freq: zero_field_line(spec, k_a),
            weight: manifold_multiplicity(spec.n, k_a)? as f64,
            k_a,
            f_upper: fu,
            m_upper: 0.0,
            f_lower: fl,
            m_lower: 0.0,
        });
    }
    out.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    Ok(out)
}

/// f_A of the higher- and lower-energy multiplet within a k_A manifold.
fn upper_lower(spec: &XAnSpec, k_a: f64) -> (f64, f64) {
    if spec.j_ax > 0.0 {
        (k_a + 0.5, k_a - 0.5)
    } else {
        (k_a - 0.5, k_a + 0.5)
    }
}

/// First-order Zeeman shift (Hz) of |f_A m_fA⟩ in the k_A manifold:
/// −B_z Σ ⟨k_A ½ m_kA m_s | f_A m_fA⟩² (γ_A m_kA + γ_X m_s).
pub fn zeeman_shift(f_a: f64, k_a: f64, m_fa: f64, bz: f64, spec: &XAnSpec) -> Result<f64> {
    spec.validate()?;
    manifold_multiplicity(spec.n, k_a)?;
    let tk = twice(k_a, "k_A")?;
    let mut total = 0.0;
    for tmk in (-tk..=tk).step_by(2) {
        for tms in [-1i64, 1] {
            let mk = tmk as f64 / 2.0;
            let ms = tms as f64 / 2.0;
            let cg = clebsch_gordan(k_a, 0.5, mk, ms, f_a, m_fa)?;
            total += cg * cg * (spec.gamma_a * mk + spec.gamma_x * ms);
        }
    }
    Ok(-bz * total)
}

/// First-order near-zero-field lines for a bias B_z along the quantization
/// axis and transverse detection: Δf_A = ±1, Δk_A = 0, Δm_fA = ±1.
pub fn near_zero_lines(spec: &XAnSpec, bz: f64) -> Result<Vec<AnalyticLine>> {
    spec.validate()?;
    if !bz.is_finite() {
        return Err(Error::InvalidArgument("bias field must be finite".into()));
    }
    let ratio = spec.gamma_a.abs().max(spec.gamma_x.abs()) * bz.abs() / spec.j_ax.abs();
    if ratio > 0.1 {
        log::warn!("γB/J = {ratio:.3} is not small; first-order shifts are inaccurate");
    }
    let mut out = Vec::new();
    for k_a in spec.k_values() {
        if k_a < 0.5 {
            continue;
        }
        let weight = manifold_multiplicity(spec.n, k_a)? as f64;
        let nu0 = zero_field_line(spec, k_a);
        let (fu, fl) = upper_lower(spec, k_a);
        let tfu = twice(fu, "f")?;
        let tfl = twice(fl, "f")?;
        for tmu in (-tfu..=tfu).step_by(2) {
            for dm in [-2i64, 2] {
                let tml = tmu + dm;
                if tml.abs() > tfl {
                    continue;
                }
                let (mu, ml) = (tmu as f64 / 2.0, tml as f64 / 2.0);
                let shift = zeeman_shift(fu, k_a, mu, bz, spec)? - zeeman_shift(fl, k_a, ml, bz, spec)?;
                out.push(AnalyticLine {
                    freq: nu0 + shift,
                    weight,
                    k_a,
                    f_upper: fu,
                    m_upper: mu,
                    f_lower: fl,
                    m_lower: ml,
                });
            }
        }
    }
    out.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    Ok(out)
}

/// Splittings of a ¹³C-labelled methyl-type comagnetometer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComagnetometerSplittings {
    /// (γ_h + γ_c)·B_z, Hz.
    pub dnu1: f64,
    /// ½(γ_h + 3γ_c)·B_z, Hz.
    pub dnu2: f64,
    /// dnu2 / dnu1, independent of B_z.
    pub ratio: f64,
}

pub fn comagnetometer_splittings(gamma_h: f64, gamma_c: f64, bz: f64) -> Result<ComagnetometerSplittings> {
    if !(bz >= 0.0) || !bz.is_finite() {
        return Err(Error::InvalidArgument(format!("B_z must be >= 0, got {bz}")));
    }
    let sum = gamma_h + gamma_c;
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::InvalidArgument("γ_h + γ_c must be finite and non-zero".into()));
    }
    Ok(ComagnetometerSplittings {
        dnu1: sum * bz,
        dnu2: 0.5 * (gamma_h + 3.0 * gamma_c) * bz,
        ratio: (gamma_h + 3.0 * gamma_c) / (2.0 * sum),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::*;

    fn spec(n: usize) -> XAnSpec {
        XAnSpec::new(n, 100.0, GAMMA_H, GAMMA_C).unwrap()
    }

    #[test]
    fn textbook_coefficients() {
        let v = clebsch_gordan(0.5, 0.5, 0.5, -0.5, 1.0, 0.0).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        let s = clebsch_gordan(0.5, 0.5, 0.5, -0.5, 0.0, 0.0).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        let s2 = clebsch_gordan(0.5, 0.5, -0.5, 0.5, 0.0, 0.0).unwrap();
        assert!((s2 + 0.5f64.sqrt()).abs() < 1e-15);
        // ⟨1 1; ½ −½ | ½ ½⟩ = √(2/3)
        let v = clebsch_gordan(1.0, 0.5, 1.0, -0.5, 0.5, 0.5).unwrap();
        assert!((v - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(clebsch_gordan(0.5, 0.5, 0.5, 0.5, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_quantum_numbers() {
        assert!(clebsch_gordan(0.5, 0.5, 1.5, 0.5, 1.0, 1.0).is_err());
        assert!(clebsch_gordan(0.5, 0.5, 0.5, 0.5, 2.0, 1.0).is_err());
        assert!(clebsch_gordan(0.3, 0.5, 0.5, 0.5, 1.0, 1.0).is_err());
        assert!(clebsch_gordan(1.0, 0.5, 0.5, 0.5, 1.5, 1.0).is_err());
    }

    #[test]
    fn multiplicities_follow_catalan_triangle() {
        assert_eq!(manifold_multiplicity(3, 1.5).unwrap(), 1);
        assert_eq!(manifold_multiplicity(3, 0.5).unwrap(), 2);
        assert_eq!(manifold_multiplicity(4, 0.0).unwrap(), 2);
        assert_eq!(manifold_multiplicity(4, 1.0).unwrap(), 3);
        assert_eq!(manifold_multiplicity(6, 0.0).unwrap(), 5);
        for n in 1..10usize {
            let total: u64 = spec(n)
                .k_values()
                .iter()
                .map(|&k| manifold_multiplicity(n, k).unwrap() * (2.0 * k + 1.0) as u64)
                .sum();
            assert_eq!(total, 1 << n);
        }
        assert!(manifold_multiplicity(3, 1.0).is_err());
    }

    #[test]
    fn zero_field_examples() {
        let f = |n| zero_field_lines(&spec(n)).unwrap().iter().map(|l| l.freq).collect::<Vec<_>>();
        assert_eq!(f(1), vec![100.0]);
        assert_eq!(f(3), vec![100.0, 200.0]);
        assert_eq!(f(2), vec![150.0]);
        assert_eq!(f(4), vec![150.0, 250.0]);
        assert_eq!(f(5), vec![100.0, 200.0, 300.0]);
    }

    #[test]
    fn xa_doublet() {
        let b = 1e-8;
        let lines = near_zero_lines(&spec(1), b).unwrap();
        assert_eq!(lines.len(), 2);
        let half = b * (GAMMA_H + GAMMA_C) / 2.0;
        assert!((lines[0].freq - (100.0 - half)).abs() < 1e-12);
        assert!((lines[1].freq - (100.0 + half)).abs() < 1e-12);
    }

    #[test]
    fn line_counts_near_zero_field() {
        for n in 1..=5usize {
            let s = spec(n);
            let lines = near_zero_lines(&s, 1e-9).unwrap();
            let expected: usize = s
                .k_values()
                .iter()
                .filter(|&&k| k >= 0.5)
                .map(|&k| {
                    let kk = s.n as f64 / 2.0 - k;
                    2 * (s.n as f64 - 2.0 * kk) as usize
                })
                .sum();
            assert_eq!(lines.len(), expected, "n = {n}");
        }
    }

    #[test]
    fn zero_bias_collapses_to_zero_field_lines() {
        for n in 1..=5 {
            let zf: Vec<f64> = zero_field_lines(&spec(n)).unwrap().iter().map(|l| l.freq).collect();
            for l in near_zero_lines(&spec(n), 0.0).unwrap() {
                assert!(zf.contains(&l.freq));
            }
        }
    }

    #[test]
    fn m_zero_shift_of_xa_vanishes() {
        for f in [0.0, 1.0] {
            assert!(zeeman_shift(f, 0.5, 0.0, 1e-6, &spec(1)).unwrap().abs() < 1e-15);
        }
        assert_eq!(zeeman_shift(1.0, 0.5, 1.0, 0.0, &spec(1)).unwrap(), 0.0);
        // stretched state: −B(γ_A k_A + γ_X/2)
        let s = zeeman_shift(2.0, 1.5, 2.0, 1e-6, &spec(3)).unwrap();
        assert!((s + 1e-6 * (1.5 * GAMMA_H + 0.5 * GAMMA_C)).abs() < 1e-9);
    }

    #[test]
    fn comagnetometer_ratio() {
        let s = comagnetometer_splittings(GAMMA_H, GAMMA_C, 1e-7).unwrap();
        assert!((s.ratio - 0.7009).abs() < 1e-4, "{}", s.ratio);
        assert!((s.dnu2 / s.dnu1 - s.ratio).abs() < 1e-12);
        let z = comagnetometer_splittings(GAMMA_H, GAMMA_C, 0.0).unwrap();
        assert_eq!((z.dnu1, z.dnu2), (0.0, 0.0));
        assert!(comagnetometer_splittings(1.0, -1.0, 1e-7).is_err());
        assert!(comagnetometer_splittings(1.0, 1.0, -1e-7).is_err());
    }
}
