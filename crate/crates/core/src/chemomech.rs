//! Closed-form electro-chemo-mechanical analyzers and the finite-strain
//! elastic-constant driver.
//!
//! Field names carry their units; conversions use [`crate::units`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculator::Calculator;
use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::structure::{self, Structure};
use crate::units;

/// Residual force above which a structure is refused by [`elastic_constants`] (eV/Å).
pub const RELAX_GATE: f64 = 1e-3;

fn require(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Data(msg.into()))
    }
}

fn finite(values: &[f64]) -> Result<()> {
    require(values.iter().all(|x| x.is_finite()), "inputs must be finite")
}

/// Total energies of two isolated slabs and their interface (eV), and the
/// interface area (Å²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTriple {
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
    pub area: f64,
}

impl EnergyTriple {
    pub fn new(e1: f64, e2: f64, e12: f64, area: f64) -> Result<Self> {
        finite(&[e1, e2, e12, area])?;
        require(area > 0.0, "interface area must be positive")?;
        Ok(EnergyTriple { e1, e2, e12, area })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkOfSeparation {
    pub ev_per_a2: f64,
    pub j_per_m2: f64,
}

pub fn work_of_separation(t: &EnergyTriple) -> Result<WorkOfSeparation> {
    let t = EnergyTriple::new(t.e1, t.e2, t.e12, t.area)?;
    let w = (t.e1 + t.e2 - t.e12) / t.area;
    Ok(WorkOfSeparation {
        ev_per_a2: w,
        j_per_m2: w * units::EV_PER_A2_TO_J_PER_M2,
    })
}

/// Electric potential gradient across an interface gap `d` (V/Å).
pub fn potential_gradient(u1_ev: f64, u2_ev: f64, d: f64) -> Result<f64> {
    finite(&[u1_ev, u2_ev, d])?;
    require(d > 0.0, "interface gap must be positive")?;
    Ok((u1_ev - u2_ev) / d)
}

/// Interphase formation energy (eV).
pub fn interphase_formation_energy(e_interphase: f64, e_electrolyte: f64) -> f64 {
    e_interphase - e_electrolyte
}

/// SEI formation energy per reacted atom (eV/atom).
pub fn sei_formation_energy(e_sei: f64, e_x: f64, e_electrolyte: f64, n_x: usize) -> Result<f64> {
    finite(&[e_sei, e_x, e_electrolyte])?;
    require(n_x >= 1, "reacted atom count must be at least 1")?;
    Ok((e_sei - (e_x + e_electrolyte)) / n_x as f64)
}

/// Average intercalation voltage (V) for `n` transferred charges.
pub fn intercalation_voltage(delta_e_f: f64, n: usize) -> Result<f64> {
    finite(&[delta_e_f])?;
    require(n >= 1, "charge count must be at least 1")?;
    Ok(-delta_e_f / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinetics {
    /// Diffusion time λ²/D (s).
    pub tau_s: f64,
    /// Diffusion-limited C-rate (h⁻¹).
    pub c_rate_per_h: f64,
}

/// Diffusion time and rate limit for length `lambda_cm` and diffusivity `d_cm2_s`.
pub fn diffusion_kinetics(lambda_cm: f64, d_cm2_s: f64) -> Result<Kinetics> {
    finite(&[lambda_cm, d_cm2_s])?;
    require(
        lambda_cm > 0.0 && d_cm2_s > 0.0,
        "diffusion length and coefficient must be positive",
    )?;
    let l2 = lambda_cm * lambda_cm;
    Ok(Kinetics {
        tau_s: l2 / d_cm2_s,
        c_rate_per_h: units::SECONDS_PER_HOUR * d_cm2_s / l2,
    })
}

/// 6×6 stiffness matrix in Voigt order xx, yy, zz, yz, xz, xy (GPa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtTensor {
    pub c: [[f64; 6]; 6],
}

impl VoigtTensor {
    pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

    pub fn new(c: [[f64; 6]; 6]) -> Result<Self> {
        finite(c.as_flattened())?;
        for i in 0..6 {
            for j in 0..i {
                if (c[i][j] - c[j][i]).abs() > Self::SYMMETRY_TOLERANCE {
                    return Err(Error::Data(format!(
                        "stiffness matrix not symmetric: C{}{} = {} vs C{}{} = {}",
                        i + 1,
                        j + 1,
                        c[i][j],
                        j + 1,
                        i + 1,
                        c[j][i]
                    )));
                }
            }
        }
        Ok(VoigtTensor { c })
    }

    /// Tensor of an isotropic solid with Lamé constants `lambda` and `mu`.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        let mut c = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = lambda;
            }
            c[i][i] = lambda + 2.0 * mu;
            c[i + 3][i + 3] = mu;
        }
        VoigtTensor { c }
    }

    pub fn cubic(c11: f64, c12: f64, c44: f64) -> Self {
        let mut c = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = if i == j { c11 } else { c12 };
            }
            c[i + 3][i + 3] = c44;
        }
        VoigtTensor { c }
    }

    pub fn max_abs_diff(&self, other: &VoigtTensor) -> f64 {
        self.c
            .as_flattened()
            .iter()
            .zip(other.c.as_flattened())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moduli {
    pub bulk_gpa: f64,
    pub shear_gpa: f64,
    pub young_gpa: f64,
}

/// Voigt-average bulk and shear moduli (GPa).
pub fn bulk_shear(t: &VoigtTensor) -> (f64, f64) {
    let c = &t.c;
    let diag = c[0][0] + c[1][1] + c[2][2];
    let off = c[0][1] + c[0][2] + c[1][2];
    let shear = c[3][3] + c[4][4] + c[5][5];
    ((diag + 2.0 * off) / 9.0, (diag - off) / 15.0 + shear / 5.0)
}

/// Voigt moduli plus the isotropic Young's modulus `9BG/(3B+G)`.
pub fn voigt_moduli(t: &VoigtTensor) -> Result<Moduli> {
    let t = VoigtTensor::new(t.c)?;
    let (b, g) = bulk_shear(&t);
    let denom = 3.0 * b + g;
    if denom == 0.0 {
        return Err(Error::Numerical("Young's modulus undefined: 3B + G = 0".into()));
    }
    Ok(Moduli {
        bulk_gpa: b,
        shear_gpa: g,
        young_gpa: 9.0 * b * g / denom,
    })
}

/// Symmetric strain tensor for a unit engineering strain in Voigt slot `k`.
pub fn voigt_strain(k: usize, amount: f64) -> Mat3 {
    let mut e = math::ZERO33;
    match k {
        0..=2 => e[k][k] = amount,
        3 => {
            e[1][2] = 0.5 * amount;
            e[2][1] = 0.5 * amount;
        }
        4 => {
            e[0][2] = 0.5 * amount;
            e[2][0] = 0.5 * amount;
        }
        5 => {
            e[0][1] = 0.5 * amount;
            e[1][0] = 0.5 * amount;
        }
        _ => panic!("Voigt index {k} out of range"),
    }
    e
}

pub fn voigt_stress(s: &Mat3) -> [f64; 6] {
    [s[0][0], s[1][1], s[2][2], s[1][2], s[0][2], s[0][1]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticResult {
    pub tensor: VoigtTensor,
    pub delta: f64,
    /// Relaxation threshold the input was checked against (eV/Å).
    pub relax_gate: f64,
    /// Largest residual force on the input (eV/Å).
    pub max_force: f64,
    /// Static stress of the unstrained input (GPa, Voigt order).
    pub reference_stress_gpa: [f64; 6],
}

/// Clamped-ion stiffness from ±`delta` strains in each Voigt direction,
/// central differences of the static stress, then symmetrized.
pub fn elastic_constants<C: Calculator + ?Sized>(s: &Structure, calc: &C, delta: f64) -> Result<ElasticResult> {
    if !(1e-4..=1e-2).contains(&delta) {
        return Err(Error::Config(format!("strain step {delta} outside [1e-4, 1e-2]")));
    }
    if !s.periodic.iter().all(|&p| p) {
        return Err(Error::Geometry("elastic constants need a fully periodic cell".into()));
    }
    let base = calc.evaluate(s)?;
    base.check_finite()?;
    let max_force = base.max_force();
    if max_force > RELAX_GATE {
        return Err(Error::Data(format!(
            "structure not relaxed: max |F| = {max_force:.3e} eV/Å exceeds {RELAX_GATE:.0e}"
        )));
    }
    let reference = base.stress(s.volume())?;

    let jobs: Vec<(usize, f64)> = (0..6).flat_map(|k| [(k, delta), (k, -delta)]).collect();
    let stresses: Vec<[f64; 6]> = jobs
        .par_iter()
        .map(|&(k, d)| {
            let t = structure::apply_strain(s, &voigt_strain(k, d))?;
            let e = calc.evaluate(&t)?;
            e.check_finite()?;
            Ok(voigt_stress(&e.stress(t.volume())?))
        })
        .collect::<Result<_>>()?;

    let mut c = [[0.0; 6]; 6];
    for j in 0..6 {
        let (plus, minus) = (&stresses[2 * j], &stresses[2 * j + 1]);
        for i in 0..6 {
            c[i][j] = (plus[i] - minus[i]) / (2.0 * delta) * units::EV_PER_A3_TO_GPA;
        }
    }
    for i in 0..6 {
        for j in 0..i {
            let m = 0.5 * (c[i][j] + c[j][i]);
            c[i][j] = m;
            c[j][i] = m;
        }
    }
    if c.as_flattened().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("singular stress response".into()));
    }
    Ok(ElasticResult {
        tensor: VoigtTensor { c },
        delta,
        relax_gate: RELAX_GATE,
        max_force,
        reference_stress_gpa: voigt_stress(&math::mat_scale(&reference, units::EV_PER_A3_TO_GPA)),
    })
}

/// Work of separation sampled along a sliding path: `l` (Å) strictly
/// increasing, `w_sep` (J/m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidingProfile {
    pub l: Vec<f64>,
    pub w_sep: Vec<f64>,
}

impl SlidingProfile {
    pub fn new(l: Vec<f64>, w_sep: Vec<f64>) -> Result<Self> {
        if l.len() != w_sep.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions but {} energies",
                l.len(),
                w_sep.len()
            )));
        }
        require(l.len() >= 3, "sliding profile needs at least 3 samples")?;
        finite(&l)?;
        finite(&w_sep)?;
        require(
            l.windows(2).all(|w| w[1] > w[0]),
            "sliding positions must be strictly increasing",
        )?;
        Ok(SlidingProfile { l, w_sep })
    }

    /// Profile traversed in the opposite direction.
    pub fn reversed(&self) -> SlidingProfile {
        let (lo, hi) = (self.l[0], self.l[self.l.len() - 1]);
        SlidingProfile {
            l: self.l.iter().rev().map(|x| lo + hi - x).collect(),
            w_sep: self.w_sep.iter().rev().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traction {
    /// `−∂W_sep/∂l` at each sample (J/m²/Å).
    pub traction: Vec<f64>,
    /// Largest |traction| (J/m²/Å).
    pub tau_max: f64,
}

/// Second-order differences on a possibly uneven grid, one-sided at the ends.
pub fn sliding_traction(p: &SlidingProfile) -> Result<Traction> {
    let p = SlidingProfile::new(p.l.clone(), p.w_sep.clone())?;
    let (x, y) = (&p.l, &p.w_sep);
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let mut d = vec![0.0; n];
    d[0] = (2.0 * h[0] + h[1]) / (h[0] * (h[0] + h[1])) * dy[0] - h[0] / (h[1] * (h[0] + h[1])) * dy[1];
    for i in 1..n - 1 {
        let (hl, hr) = (h[i - 1], h[i]);
        d[i] = (hl * dy[i] / hr + hr * dy[i - 1] / hl) / (hl + hr);
    }
    let (hl, hr) = (h[n - 3], h[n - 2]);
    d[n - 1] = (2.0 * hr + hl) / (hr * (hr + hl)) * dy[n - 2] - hr / (hl * (hr + hl)) * dy[n - 3];
    let traction: Vec<f64> = d.iter().map(|v| -v).collect();
    let tau_max = traction.iter().map(|t| t.abs()).fold(0.0, f64::max);
    Ok(Traction { traction, tau_max })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctahedralDistortion {
    /// Variance of the 12 cis bond angles about 90° (deg²).
    pub angle_variance: f64,
    /// Mean of `(l_i/l_0)²` with `l_0` the radius of the regular octahedron
    /// of equal volume.
    pub quadratic_elongation: f64,
    /// Distance from the center atom to the ligand centroid (Å).
    pub off_center: f64,
    /// Octahedron volume (Å³).
    pub volume: f64,
}

/// The 15 ways to split six ligands into three opposite pairs.
fn pairings() -> Vec<[(usize, usize); 3]> {
    let mut out = Vec::with_capacity(15);
    for b in 1..6 {
        let rest: Vec<usize> = (1..6).filter(|&k| k != b).collect();
        for j in 1..4 {
            let others: Vec<usize> = (1..4).filter(|&k| k != j).collect();
            out.push([(0, b), (rest[0], rest[j]), (rest[others[0]], rest[others[1]])]);
        }
    }
    out
}

fn angle_deg(a: Vec3, b: Vec3) -> f64 {
    let c = (math::dot(a, b) / (math::norm(a) * math::norm(b))).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

pub fn octahedral_distortion(s: &Structure, center: usize, ligands: &[usize]) -> Result<OctahedralDistortion> {
    if ligands.len() != 6 {
        return Err(Error::Data(format!("expected 6 ligands, got {}", ligands.len())));
    }
    let n = s.len();
    if center >= n || ligands.iter().any(|&l| l >= n) {
        return Err(Error::Data("atom index out of range".into()));
    }
    for (k, &a) in ligands.iter().enumerate() {
        if a == center || ligands[..k].contains(&a) {
            return Err(Error::Data(
                "ligands must be distinct and differ from the center".into(),
            ));
        }
    }
    let v: Vec<Vec3> = ligands.iter().map(|&l| s.displacement(center, l)).collect();
    for (k, a) in v.iter().enumerate() {
        if math::norm(*a) < 1e-8 || v[..k].iter().any(|b| math::norm(math::sub(*a, *b)) < 1e-8) {
            return Err(Error::Geometry("coincident atoms in octahedron".into()));
        }
    }

    let angle = |i: usize, j: usize| angle_deg(v[i], v[j]);
    let trans = pairings()
        .into_iter()
        .map(|p| (p, p.iter().map(|&(i, j)| angle(i, j)).sum::<f64>()))
        .fold(None, |best: Option<([(usize, usize); 3], f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
        .expect("15 pairings")
        .0;
    let is_trans = |i: usize, j: usize| trans.iter().any(|&(a, b)| (a, b) == (i, j) || (b, a) == (i, j));

    let mut var = 0.0;
    for i in 0..6 {
        for j in i + 1..6 {
            if !is_trans(i, j) {
                let d = angle(i, j) - 90.0;
                var += d * d;
            }
        }
    }
    var /= 11.0;

    let mut centroid = math::ZERO3;
    for a in &v {
        math::add_assign(&mut centroid, *a);
    }
    let centroid = math::scale(centroid, 1.0 / 6.0);

    // Faces take one vertex from each opposite pair.
    let mut volume = 0.0;
    for mask in 0..8usize {
        let f: Vec<Vec3> = (0..3)
            .map(|k| {
                let (a, b) = trans[k];
                math::sub(v[if mask >> k & 1 == 0 { a } else { b }], centroid)
            })
            .collect();
        volume += math::dot(f[0], math::cross(f[1], f[2])).abs() / 6.0;
    }
    if !(volume > 1e-12) {
        return Err(Error::Geometry("degenerate octahedron".into()));
    }
    let l0 = (0.75 * volume).cbrt();
    let quadratic_elongation = v.iter().map(|a| (math::norm(*a) / l0).powi(2)).sum::<f64>() / 6.0;

    Ok(OctahedralDistortion {
        angle_variance: var,
        quadratic_elongation,
        off_center: math::norm(centroid),
        volume,
    })
}
