//! Shared atomic network potential with optional charge equilibration.
//!
//! Every atom, whatever its species, is fed through the same energy network
//! and the same electronegativity network; species enter as the scaled
//! atomic-number feature of the descriptor. The total energy is
//! `E = Σ_i E_i(G_i, Q_i) + E_elec(Q)` with the charges `Q` from charge
//! equilibration on the predicted electronegativities.
//!
//! Forces and stresses use the adjoint of the charge solve, so that the
//! charge response is included without differentiating `Q` explicitly:
//!
//! ```text
//! dE/dR = Σ_i (∂E_i/∂G_i + (Q_i − λ_i) ∂χ_i/∂G_i)·∂G_i/∂R
//!       + Σ_ij (½ Q_i Q_j − λ_i Q_j) ∂A_ij/∂R
//! ```
//!
//! where `λ` solves the bordered system with right-hand side `∂E_i/∂Q_i`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculator::{Calculator, Evaluation};
use crate::descriptors::{self, scatter_neighbor_gradients, AcsfParams, DescriptorSet};
use crate::electrostatics::{self, Kernel, KktSolver};
use crate::elements;
use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::network::{Forward, Mlp};
use crate::structure::Structure;
use crate::units::AMU_A2_PER_FS2_TO_EV;

pub const FORMAT_VERSION: u32 = 1;

/// Default hardness for every element (eV/e²).
pub const DEFAULT_HARDNESS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementParams {
    pub symbol: String,
    pub z: u8,
    /// Gaussian charge width (Å).
    pub alpha: f64,
    /// Hardness (eV/e²).
    pub hardness: f64,
}

impl ElementParams {
    /// Width from the covalent radius, default hardness.
    pub fn defaults(z: u8) -> Result<Self> {
        let symbol = elements::symbol(z).ok_or_else(|| Error::Config(format!("unknown atomic number {z}")))?;
        Ok(ElementParams {
            symbol: symbol.to_string(),
            z,
            alpha: elements::covalent_radius(z).unwrap_or(1.0),
            hardness: DEFAULT_HARDNESS,
        })
    }
}

/// Per-feature affine map applied to descriptors before the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(n: usize) -> Self {
        Standardization {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Mean and standard deviation over all atoms; features with (nearly)
    /// constant value keep unit scale.
    pub fn fit<'a>(n: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in rows {
            for k in 0..n {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(n);
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / c - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-8 * m.abs().max(1e-8) && sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { mean, scale }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Options for building a fresh model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub acsf: AcsfParams,
    pub hidden: Vec<usize>,
    pub elements: Vec<u8>,
    pub use_electrostatics: bool,
    /// Defaults to `use_electrostatics`.
    pub use_charge_input: Option<bool>,
    pub elec_cutoff: Option<f64>,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            acsf: AcsfParams::default(),
            hidden: vec![24, 24],
            elements: Vec::new(),
            use_electrostatics: false,
            use_charge_input: None,
            elec_cutoff: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub format_version: u32,
    pub seed: u64,
    pub acsf: AcsfParams,
    pub standardization: Standardization,
    /// Atomic energy head (eV).
    pub energy_net: Mlp,
    /// Electronegativity head (V).
    pub chi_net: Mlp,
    pub elements: Vec<ElementParams>,
    pub use_electrostatics: bool,
    pub use_charge_input: bool,
    /// Kernel truncation (Å); periodic cells fall back to the default.
    pub elec_cutoff: Option<f64>,
}

/// How charges are obtained during an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum ChargeMode {
    /// Charge equilibration, with charge response in forces and stress.
    Equilibrate,
    /// Fixed charges; forces neglect any charge response.
    Frozen(Vec<f64>),
}

impl PotentialModel {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.acsf.validate()?;
        let use_charge_input = spec.use_charge_input.unwrap_or(spec.use_electrostatics);
        let nf = spec.acsf.n_features();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let energy_net = Mlp::new(nf + usize::from(use_charge_input), &spec.hidden, &mut rng)?;
        let chi_net = Mlp::new(nf, &spec.hidden, &mut rng)?;
        let mut zs = spec.elements.clone();
        zs.sort_unstable();
        zs.dedup();
        let elements = zs.into_iter().map(ElementParams::defaults).collect::<Result<_>>()?;
        let m = PotentialModel {
            format_version: FORMAT_VERSION,
            seed: spec.seed,
            acsf: spec.acsf.clone(),
            standardization: Standardization::identity(nf),
            energy_net,
            chi_net,
            elements,
            use_electrostatics: spec.use_electrostatics,
            use_charge_input,
            elec_cutoff: spec.elec_cutoff,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.acsf.validate()?;
        self.energy_net.validate()?;
        self.chi_net.validate()?;
        let nf = self.acsf.n_features();
        if self.standardization.mean.len() != nf || self.standardization.scale.len() != nf {
            return Err(Error::Config(
                "standardization length differs from descriptor length".into(),
            ));
        }
        if self.standardization.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite())
            || self.standardization.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Config(
                "standardization must be finite with positive scales".into(),
            ));
        }
        if self.energy_net.n_inputs() != nf + usize::from(self.use_charge_input) || self.chi_net.n_inputs() != nf {
            return Err(Error::Config(
                "network input width differs from descriptor length".into(),
            ));
        }
        if self.use_charge_input && !self.use_electrostatics {
            return Err(Error::Config("charge input requires electrostatics".into()));
        }
        for e in &self.elements {
            if !(e.alpha > 0.0) || !(e.hardness > 0.0) || !e.alpha.is_finite() || !e.hardness.is_finite() {
                return Err(Error::Config(format!(
                    "element {} needs positive alpha and hardness",
                    e.symbol
                )));
            }
        }
        if let Some(c) = self.elec_cutoff {
            if !(c > 0.0) {
                return Err(Error::Config(format!("electrostatic cutoff must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.acsf.n_features()
    }

    pub fn element(&self, z: u8) -> Option<&ElementParams> {
        self.elements.iter().find(|e| e.z == z)
    }

    pub fn element_mut(&mut self, z: u8) -> Option<&mut ElementParams> {
        self.elements.iter_mut().find(|e| e.z == z)
    }

    /// Fails when `s` holds a species the model does not know or when `d`
    /// does not fit the model.
    pub fn check_compatible(&self, s: &Structure, d: &DescriptorSet) -> Result<()> {
        self.check_species(s)?;
        if d.n_features != self.n_features() || d.len() != s.len() {
            return Err(Error::DimensionMismatch(format!(
                "descriptors ({} atoms × {}) do not fit model ({} atoms × {})",
                d.len(),
                d.n_features,
                s.len(),
                self.n_features()
            )));
        }
        Ok(())
    }

    pub fn check_species(&self, s: &Structure) -> Result<()> {
        for &z in &s.species {
            if self.element(z).is_none() {
                let sym = elements::symbol(z).unwrap_or("?");
                return Err(Error::Data(format!("element {sym} is not supported by the model")));
            }
        }
        Ok(())
    }

    /// Electronegativity for one raw descriptor vector.
    pub fn chi(&self, g: &[f64]) -> f64 {
        self.chi_net.value(&self.standardization.apply(g))
    }

    /// Atomic energy for one raw descriptor vector (and charge if used).
    pub fn atomic_energy(&self, g: &[f64], q: Option<f64>) -> f64 {
        let mut x = self.standardization.apply(g);
        if self.use_charge_input {
            x.push(q.unwrap_or(0.0));
        }
        self.energy_net.value(&x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: PotentialModel = serde_json::from_str(text).map_err(|e| Error::Data(format!("model file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Per-structure data that does not depend on network weights.
    pub fn prepare(&self, s: &Structure, d: DescriptorSet) -> Result<Prepared> {
        self.check_compatible(s, &d)?;
        let inputs = (0..s.len()).map(|i| self.standardization.apply(d.values(i))).collect();
        let elec = if self.use_electrostatics {
            let alpha: Vec<f64> = s.species.iter().map(|z| self.element(*z).unwrap().alpha).collect();
            let hardness: Vec<f64> = s.species.iter().map(|z| self.element(*z).unwrap().hardness).collect();
            let kernel = electrostatics::build_kernel(s, &alpha, self.elec_cutoff)?;
            let mut matrix = kernel.matrix.clone();
            for (i, j) in hardness.iter().enumerate() {
                matrix[(i, i)] += j;
            }
            let solver = KktSolver::new(&matrix)?;
            Some(ElecSetup {
                kernel,
                matrix,
                solver,
                total_charge: s.total_charge,
            })
        } else {
            None
        };
        Ok(Prepared {
            descriptors: d,
            inputs,
            elec,
        })
    }
}

/// Coulomb data of one structure.
#[derive(Debug, Clone)]
pub struct ElecSetup {
    pub kernel: Kernel,
    /// Kernel plus hardness on the diagonal.
    pub matrix: DMatrix<f64>,
    pub solver: KktSolver,
    pub total_charge: f64,
}

/// Weight-independent evaluation inputs of one structure.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub descriptors: DescriptorSet,
    /// Standardized descriptors.
    pub inputs: Vec<Vec<f64>>,
    pub elec: Option<ElecSetup>,
}

/// Network activations and charges of one evaluation.
pub(crate) struct State {
    pub chi_fw: Vec<Forward>,
    pub chi: Vec<f64>,
    pub charges: Vec<f64>,
    pub mu: Option<f64>,
    pub residual: Option<f64>,
    pub e_fw: Vec<Forward>,
    pub atom_energies: Vec<f64>,
    /// `∂E_i/∂x_i`, including the charge input last when present.
    pub g_e: Vec<Vec<f64>>,
    /// `∂χ_i/∂x_i`.
    pub g_chi: Vec<Vec<f64>>,
    /// Adjoint of the charge solve; zero for frozen charges.
    pub lambda: Vec<f64>,
    pub elec_energy: f64,
}

pub(crate) fn forward_state(m: &PotentialModel, prep: &Prepared, mode: &ChargeMode) -> Result<State> {
    let n = prep.inputs.len();
    let (chi_fw, chi, g_chi): (Vec<Forward>, Vec<f64>, Vec<Vec<f64>>) = if m.use_electrostatics {
        let fws: Vec<Forward> = prep.inputs.par_iter().map(|x| m.chi_net.forward(x)).collect();
        let chi = fws.iter().map(|f| f.value).collect();
        let g = fws.par_iter().map(|f| m.chi_net.input_gradient(f)).collect();
        (fws, chi, g)
    } else {
        (Vec::new(), vec![0.0; n], Vec::new())
    };

    let (charges, mu, residual) = match (&prep.elec, mode) {
        (None, ChargeMode::Equilibrate) => (vec![0.0; n], None, None),
        (Some(el), ChargeMode::Equilibrate) => {
            let sol = electrostatics::equilibrate_with(&el.solver, &el.matrix, &chi, el.total_charge)?;
            (sol.charges, Some(sol.mu), Some(sol.residual))
        }
        (_, ChargeMode::Frozen(q)) => {
            if q.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} frozen charges for {n} atoms",
                    q.len()
                )));
            }
            (q.clone(), None, None)
        }
    };

    let e_inputs: Vec<Vec<f64>> = prep
        .inputs
        .iter()
        .zip(&charges)
        .map(|(x, q)| {
            let mut v = x.clone();
            if m.use_charge_input {
                v.push(*q);
            }
            v
        })
        .collect();
    let e_fw: Vec<Forward> = e_inputs.par_iter().map(|x| m.energy_net.forward(x)).collect();
    let atom_energies: Vec<f64> = e_fw.iter().map(|f| f.value).collect();
    let g_e: Vec<Vec<f64>> = e_fw.par_iter().map(|f| m.energy_net.input_gradient(f)).collect();

    let mut lambda = vec![0.0; n];
    let mut elec_energy = 0.0;
    if let Some(el) = &prep.elec {
        elec_energy = electrostatics::electrostatic_energy(&charges, &el.matrix, &chi);
        if m.use_charge_input && matches!(mode, ChargeMode::Equilibrate) {
            let nf = m.n_features();
            let e: Vec<f64> = g_e.iter().map(|g| g[nf]).collect();
            lambda = el.solver.solve(&e, 0.0)?.0;
        }
    }
    Ok(State {
        chi_fw,
        chi,
        charges,
        mu,
        residual,
        e_fw,
        atom_energies,
        g_e,
        g_chi,
        lambda,
        elec_energy,
    })
}

/// Position gradients and virials of one evaluation, kept by origin.
pub(crate) struct Derivatives {
    pub short_grad: Vec<Vec3>,
    pub elec_grad: Vec<Vec3>,
    pub atom_virials: Vec<Mat3>,
    pub virial_radial: Mat3,
    pub virial_angular: Mat3,
    pub virial_pair: Mat3,
}

pub(crate) fn derivatives(m: &PotentialModel, s: &Structure, prep: &Prepared, st: &State) -> Derivatives {
    let n = s.len();
    let nf = m.n_features();
    let scale = &m.standardization.scale;
    let radial = m.acsf.radial_range();
    let angular = m.acsf.angular_range();
    let d = &prep.descriptors;

    // per-atom neighbor gradients: (short radial, short angular, elec radial, elec angular)
    let per_atom: Vec<[Vec<Vec3>; 4]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let w_short: Vec<f64> = (0..nf).map(|k| st.g_e[i][k] / scale[k]).collect();
            let a = &d.atoms[i];
            let sr = a.contract_range(&w_short, radial.clone());
            let sa = a.contract_range(&w_short, angular.clone());
            let (er, ea) = if m.use_electrostatics {
                let c = st.charges[i] - st.lambda[i];
                let w_elec: Vec<f64> = (0..nf).map(|k| c * st.g_chi[i][k] / scale[k]).collect();
                (
                    a.contract_range(&w_elec, radial.clone()),
                    a.contract_range(&w_elec, angular.clone()),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            [sr, sa, er, ea]
        })
        .collect();

    let mut short_grad = vec![math::ZERO3; n];
    let mut elec_grad = vec![math::ZERO3; n];
    let mut atom_virials = vec![math::ZERO33; n];
    let mut virial_radial = math::ZERO33;
    let mut virial_angular = math::ZERO33;
    let mut virial_pair = math::ZERO33;
    for (i, parts) in per_atom.iter().enumerate() {
        let a = &d.atoms[i];
        for (k, g) in parts.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let mut w = math::ZERO33;
            let target = if k < 2 { &mut short_grad } else { &mut elec_grad };
            scatter_neighbor_gradients(a, i, g, target, &mut w);
            math::mat_add_assign(&mut atom_virials[i], &w);
            if k % 2 == 0 {
                math::mat_add_assign(&mut virial_radial, &w);
            } else {
                math::mat_add_assign(&mut virial_angular, &w);
            }
        }
    }

    if let Some(el) = &prep.elec {
        let q = &st.charges;
        let l = &st.lambda;
        for p in &el.kernel.pairs {
            let (i, j) = (p.i, p.j);
            let c = q[i] * q[j] - l[i] * q[j] - l[j] * q[i];
            if c == 0.0 {
                continue;
            }
            let g = math::scale(p.vector, c * p.derivative / p.distance);
            math::add_assign(&mut elec_grad[j], g);
            math::sub_assign(&mut elec_grad[i], g);
            let w = math::outer(g, p.vector);
            let half = math::mat_scale(&w, 0.5);
            math::mat_add_assign(&mut atom_virials[i], &half);
            math::mat_add_assign(&mut atom_virials[j], &half);
            math::mat_add_assign(&mut virial_pair, &w);
        }
    }
    Derivatives {
        short_grad,
        elec_grad,
        atom_virials,
        virial_radial,
        virial_angular,
        virial_pair,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `E_short + E_elec` (eV).
    pub energy: f64,
    pub short_energy: f64,
    pub elec_energy: f64,
    pub atom_energies: Vec<f64>,
    /// Charges (e); zero without electrostatics.
    pub charges: Vec<f64>,
    /// Electronegativities (V); zero without electrostatics.
    pub chi: Vec<f64>,
    /// Equalized electronegativity (V) when charges were equilibrated.
    pub mu: Option<f64>,
    /// `‖χ + AQ − μ‖∞` of the charge solve (V).
    pub qeq_residual: Option<f64>,
    pub forces: Vec<Vec3>,
    /// Through the energy head's descriptor dependence.
    pub short_forces: Vec<Vec3>,
    /// Through electronegativities, the kernel and charge response.
    pub elec_forces: Vec<Vec3>,
    /// Per-atom `∂E/∂ε` shares (eV).
    pub atom_virials: Vec<Mat3>,
    pub virial_radial: Mat3,
    pub virial_angular: Mat3,
    /// Kernel pair contribution.
    pub virial_pair: Mat3,
    /// `Σ W_i / V` (eV/Å³) when the structure has a cell.
    pub static_stress: Option<Mat3>,
    /// Present when velocities and a cell are present.
    pub kinetic_stress: Option<Mat3>,
    pub stress: Option<Mat3>,
}

impl Prediction {
    pub fn virial(&self) -> Mat3 {
        let mut w = math::ZERO33;
        for a in &self.atom_virials {
            math::mat_add_assign(&mut w, a);
        }
        w
    }

    pub fn max_force(&self) -> f64 {
        self.forces.iter().map(|f| math::norm(*f)).fold(0.0, f64::max)
    }
}

pub(crate) fn assemble(m: &PotentialModel, s: &Structure, prep: &Prepared, st: State) -> Result<Prediction> {
    let der = derivatives(m, s, prep, &st);
    let short_energy: f64 = st.atom_energies.iter().sum();
    let short_forces: Vec<Vec3> = der.short_grad.iter().map(|g| math::scale(*g, -1.0)).collect();
    let elec_forces: Vec<Vec3> = der.elec_grad.iter().map(|g| math::scale(*g, -1.0)).collect();
    let forces = short_forces
        .iter()
        .zip(&elec_forces)
        .map(|(a, b)| math::add(*a, *b))
        .collect();
    let (static_stress, kinetic_stress) = if s.has_cell() {
        let v = s.volume();
        let mut w = math::ZERO33;
        for a in &der.atom_virials {
            math::mat_add_assign(&mut w, a);
        }
        let kin = if s.velocities.is_some() {
            Some(kinetic_stress(s, None)?)
        } else {
            None
        };
        (Some(math::mat_scale(&w, 1.0 / v)), kin)
    } else {
        (None, None)
    };
    let stress = static_stress.map(|st| {
        let mut t = st;
        if let Some(k) = &kinetic_stress {
            math::mat_add_assign(&mut t, k);
        }
        t
    });
    let p = Prediction {
        energy: short_energy + st.elec_energy,
        short_energy,
        elec_energy: st.elec_energy,
        atom_energies: st.atom_energies,
        charges: st.charges,
        chi: st.chi,
        mu: st.mu,
        qeq_residual: st.residual,
        forces,
        short_forces,
        elec_forces,
        atom_virials: der.atom_virials,
        virial_radial: der.virial_radial,
        virial_angular: der.virial_angular,
        virial_pair: der.virial_pair,
        static_stress,
        kinetic_stress,
        stress,
    };
    if !p.energy.is_finite() || p.forces.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("prediction produced non-finite values".into()));
    }
    Ok(p)
}

/// Prediction from precomputed descriptors.
pub fn predict_with(s: &Structure, d: &DescriptorSet, m: &PotentialModel, mode: &ChargeMode) -> Result<Prediction> {
    let prep = m.prepare(s, d.clone())?;
    let st = forward_state(m, &prep, mode)?;
    assemble(m, s, &prep, st)
}

/// Full prediction: descriptors, charge equilibration, energies, forces and
/// stress.
pub fn predict(s: &Structure, m: &PotentialModel) -> Result<Prediction> {
    m.check_species(s)?;
    let d = descriptors::describe(s, &m.acsf)?;
    predict_with(s, &d, m, &ChargeMode::Equilibrate)
}

fn short_only(m: &PotentialModel, s: &Structure, d: &DescriptorSet, q: Option<&[f64]>) -> Result<(Prepared, State)> {
    m.check_compatible(s, d)?;
    if q.is_some() != m.use_charge_input {
        return Err(Error::DimensionMismatch(
            "charges must be given exactly when the model takes them as input".into(),
        ));
    }
    let n = s.len();
    let prep = Prepared {
        descriptors: d.clone(),
        inputs: (0..n).map(|i| m.standardization.apply(d.values(i))).collect(),
        elec: None,
    };
    let charges = q.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if charges.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} charges for {n} atoms",
            charges.len()
        )));
    }
    let short = with_short(m);
    let st = forward_state(&short, &prep, &ChargeMode::Frozen(charges))?;
    Ok((prep, st))
}

/// `E_short = Σ_i E_i` and the atomic energies.
pub fn short_range_energy(
    s: &Structure,
    d: &DescriptorSet,
    m: &PotentialModel,
    q: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let (_, st) = short_only(m, s, d, q)?;
    Ok((st.atom_energies.iter().sum(), st.atom_energies))
}

/// `-∂E_short/∂R` at fixed charges.
pub fn short_range_forces(
    s: &Structure,
    d: &DescriptorSet,
    m: &PotentialModel,
    q: Option<&[f64]>,
) -> Result<Vec<Vec3>> {
    let (prep, st) = short_only(m, s, d, q)?;
    let der = derivatives(&with_short(m), s, &prep, &st);
    Ok(der.short_grad.iter().map(|g| math::scale(*g, -1.0)).collect())
}

/// `(1/V) ∂E_short/∂ε` at fixed charges (eV/Å³).
pub fn static_stress(s: &Structure, d: &DescriptorSet, m: &PotentialModel, q: Option<&[f64]>) -> Result<Mat3> {
    if !s.has_cell() {
        return Err(Error::Geometry("static stress needs a cell volume".into()));
    }
    let (prep, st) = short_only(m, s, d, q)?;
    let der = derivatives(&with_short(m), s, &prep, &st);
    let mut w = der.virial_radial;
    math::mat_add_assign(&mut w, &der.virial_angular);
    Ok(math::mat_scale(&w, 1.0 / s.volume()))
}

fn with_short(m: &PotentialModel) -> PotentialModel {
    PotentialModel {
        use_electrostatics: false,
        ..m.clone()
    }
}

/// `(1/V) Σ_k m_k v_k ⊗ v_k` in eV/Å³. Uses the cell volume, or
/// `reference_volume` when given.
pub fn kinetic_stress(s: &Structure, reference_volume: Option<f64>) -> Result<Mat3> {
    let v = s
        .velocities
        .as_ref()
        .ok_or_else(|| Error::Data("kinetic stress needs velocities".into()))?;
    let volume = match reference_volume {
        Some(v) => v,
        None if s.has_cell() => s.volume(),
        None => return Err(Error::Data("kinetic stress needs a cell or a reference volume".into())),
    };
    if !(volume > 0.0) {
        return Err(Error::Data("reference volume must be positive".into()));
    }
    let mut t = math::ZERO33;
    for (m, vel) in s.masses.iter().zip(v) {
        math::mat_add_assign(&mut t, &math::mat_scale(&math::outer(*vel, *vel), *m));
    }
    Ok(math::mat_scale(&t, AMU_A2_PER_FS2_TO_EV / volume))
}

/// Model wrapped as a [`Calculator`].
#[derive(Debug, Clone)]
pub struct ModelCalculator {
    pub model: PotentialModel,
}

impl ModelCalculator {
    pub fn new(model: PotentialModel) -> Self {
        ModelCalculator { model }
    }
}

impl Calculator for ModelCalculator {
    fn evaluate(&self, s: &Structure) -> Result<Evaluation> {
        let p = predict(s, &self.model)?;
        Ok(Evaluation {
            energy: p.energy,
            forces: p.forces,
            atom_virials: p.atom_virials,
        })
    }

    fn name(&self) -> String {
        "model".into()
    }
}
