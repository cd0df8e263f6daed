//! Charge equilibration with Gaussian-smeared charges.
//!
//! The charge energy is `E(Q) = Σ_i χ_i Q_i + ½ Σ_ij A_ij Q_i Q_j` with
//! `A_ii = J_i + k_e/(α_i √π)` and `A_ij = κ(R_ij)` the interaction of two
//! Gaussian densities. It is minimized under `Σ Q_i = Q_tot` through the
//! bordered (KKT) system
//!
//! ```text
//! [ A  1 ] [ Q  ]   [ -χ    ]
//! [ 1ᵀ 0 ] [ -μ ] = [ Q_tot ]
//! ```
//!
//! The same factorization serves the adjoint solve used for charge-response
//! forces.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::neighbors::check_minimum_image;
use crate::potential::PotentialModel;
use crate::structure::Structure;
use crate::units::COULOMB_EV_ANGSTROM as KE;

/// Kernel truncation radius used for periodic cells when none is given (Å).
pub const DEFAULT_PERIODIC_CUTOFF: f64 = 15.0;

/// Largest system solved by dense factorization.
pub const DENSE_LIMIT: usize = 2000;

/// Condition-number bound for the KKT matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance of the iterative solver (relative residual).
pub const CG_TOLERANCE: f64 = 1e-10;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Interaction of two Gaussian charges with combined width `gamma` at
/// distance `r`, and its radial derivative.
pub fn gaussian_pair(r: f64, gamma: f64) -> (f64, f64) {
    let s = std::f64::consts::SQRT_2 * gamma;
    let x = r / s;
    if x < 1e-2 {
        // series of erf(x)/x about 0
        let c = FRAC_2_SQRT_PI / s;
        let x2 = x * x;
        let k = KE * c * (1.0 - x2 / 3.0 + x2 * x2 / 10.0 - x2 * x2 * x2 / 42.0);
        let dk = KE * c * x * (-2.0 / 3.0 + 0.4 * x2 - x2 * x2 / 7.0) / s;
        return (k, dk);
    }
    let erf = libm::erf(x);
    let k = KE * erf / r;
    let dk = KE * (FRAC_2_SQRT_PI / s * (-x * x).exp() / r - erf / (r * r));
    (k, dk)
}

/// Self-interaction of a Gaussian charge of width `alpha`.
pub fn self_energy(alpha: f64) -> f64 {
    KE / (alpha * std::f64::consts::PI.sqrt())
}

/// One unordered pair of the interaction kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPair {
    pub i: usize,
    pub j: usize,
    /// Minimum-image `R_j - R_i`.
    pub vector: Vec3,
    pub distance: f64,
    pub value: f64,
    /// `dκ/dR`.
    pub derivative: f64,
}

/// Interaction kernel with the per-pair data needed for forces and virials.
#[derive(Debug, Clone)]
pub struct Kernel {
    /// Symmetric `N×N` matrix; the diagonal holds the self terms.
    pub matrix: DMatrix<f64>,
    pub pairs: Vec<KernelPair>,
    pub cutoff: Option<f64>,
}

/// Truncation radius applied to `s`: the requested one, or the periodic
/// default for periodic cells.
pub fn effective_cutoff(s: &Structure, cutoff: Option<f64>) -> Option<f64> {
    match cutoff {
        Some(c) => Some(c),
        None if s.is_periodic() => Some(DEFAULT_PERIODIC_CUTOFF),
        None => None,
    }
}

/// Builds the smeared-Coulomb kernel. With a cutoff the pair term is shifted
/// so that value and slope vanish at the cutoff.
pub fn build_kernel(s: &Structure, alpha: &[f64], cutoff: Option<f64>) -> Result<Kernel> {
    let n = s.len();
    if alpha.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} widths for {} atoms",
            alpha.len(),
            n
        )));
    }
    if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Config("Gaussian widths must be positive".into()));
    }
    let cutoff = effective_cutoff(s, cutoff);
    if let Some(rc) = cutoff {
        if !(rc > 0.0) || !rc.is_finite() {
            return Err(Error::Config(format!(
                "electrostatic cutoff must be positive, got {rc}"
            )));
        }
        check_minimum_image(s, rc)?;
    }
    let image = s.image();
    let rows: Vec<Result<Vec<KernelPair>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in (i + 1)..n {
                let v = image.shortest(math::sub(s.positions[j], s.positions[i]));
                let r = math::norm(v);
                if r == 0.0 {
                    return Err(Error::Geometry(format!("atoms {i} and {j} coincide")));
                }
                let gamma = (alpha[i] * alpha[i] + alpha[j] * alpha[j]).sqrt();
                let (value, derivative) = match cutoff {
                    None => gaussian_pair(r, gamma),
                    Some(rc) if r >= rc => continue,
                    Some(rc) => {
                        let (k, dk) = gaussian_pair(r, gamma);
                        let (kc, dkc) = gaussian_pair(rc, gamma);
                        (k - kc - (r - rc) * dkc, dk - dkc)
                    }
                };
                row.push(KernelPair {
                    i,
                    j,
                    vector: v,
                    distance: r,
                    value,
                    derivative,
                });
            }
            Ok(row)
        })
        .collect();
    let mut matrix = DMatrix::zeros(n, n);
    let mut pairs = Vec::new();
    for row in rows {
        for p in row? {
            matrix[(p.i, p.j)] = p.value;
            matrix[(p.j, p.i)] = p.value;
            pairs.push(p);
        }
    }
    for (i, &a) in alpha.iter().enumerate() {
        matrix[(i, i)] = self_energy(a);
    }
    Ok(Kernel { matrix, pairs, cutoff })
}

/// Kernel matrix only.
pub fn coulomb_kernel(s: &Structure, alpha: &[f64], cutoff: Option<f64>) -> Result<DMatrix<f64>> {
    Ok(build_kernel(s, alpha, cutoff)?.matrix)
}

#[derive(Debug, Clone)]
pub struct QeqSystem {
    /// Electronegativities (V).
    pub chi: Vec<f64>,
    /// Hardness (eV/e²).
    pub hardness: Vec<f64>,
    /// Gaussian widths (Å).
    pub alpha: Vec<f64>,
    /// Full interaction matrix including hardness on the diagonal (eV/e²).
    pub matrix: DMatrix<f64>,
    pub total_charge: f64,
}

impl QeqSystem {
    /// Adds the hardness to the diagonal of `kernel`.
    pub fn new(
        chi: Vec<f64>,
        hardness: Vec<f64>,
        alpha: Vec<f64>,
        kernel: DMatrix<f64>,
        total_charge: f64,
    ) -> Result<Self> {
        let n = chi.len();
        if hardness.len() != n || alpha.len() != n || kernel.nrows() != n || kernel.ncols() != n {
            return Err(Error::DimensionMismatch(
                "charge equilibration inputs differ in length".into(),
            ));
        }
        if hardness.iter().any(|j| !(*j > 0.0)) {
            return Err(Error::Config("hardness must be positive".into()));
        }
        let mut matrix = kernel;
        for (i, j) in hardness.iter().enumerate() {
            matrix[(i, i)] += j;
        }
        Ok(QeqSystem {
            chi,
            hardness,
            alpha,
            matrix,
            total_charge,
        })
    }

    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSolution {
    /// Charges (e).
    pub charges: Vec<f64>,
    /// Electronegativity-equalization multiplier (V).
    pub mu: f64,
    /// `‖χ + AQ − μ‖∞` (V).
    pub residual: f64,
}

/// Factorized bordered system `[A 1; 1ᵀ 0]`.
#[derive(Debug, Clone)]
pub enum KktSolver {
    Dense {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
    Iterative {
        matrix: DMatrix<f64>,
        /// `A⁻¹ 1`
        u: DVector<f64>,
    },
}

fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.len();
    let diag: DVector<f64> = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Numerical(
            "interaction matrix has a non-positive diagonal".into(),
        ));
    }
    let bnorm = b.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut z = r.component_div(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..(10 * n).max(100) {
        let ap = a * &p;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical("interaction matrix is not positive definite".into()));
        }
        let step = rz / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        if r.norm() <= CG_TOLERANCE * bnorm {
            return Ok(x);
        }
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * &p;
        rz = rz_new;
    }
    Err(Error::Numerical(
        "conjugate-gradient charge solve did not converge".into(),
    ))
}

impl KktSolver {
    /// Dense eigendecomposition up to [`DENSE_LIMIT`] atoms, conjugate
    /// gradients beyond.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() <= DENSE_LIMIT {
            Self::dense(a)
        } else {
            Self::iterative(a)
        }
    }

    pub fn dense(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(
                "interaction matrix must be square and nonempty".into(),
            ));
        }
        let mut k = DMatrix::zeros(n + 1, n + 1);
        k.view_mut((0, 0), (n, n)).copy_from(a);
        for i in 0..n {
            k[(i, n)] = 1.0;
            k[(n, i)] = 1.0;
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite interaction matrix".into()));
        }
        let eig = SymmetricEigen::new(k);
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(min > 0.0) || max / min > MAX_CONDITION {
            return Err(Error::Numerical(format!(
                "charge-equilibration system is singular or ill-conditioned (condition {:.3e})",
                max / min
            )));
        }
        Ok(KktSolver::Dense {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
        })
    }

    /// Conjugate gradients on `A` with the constraint eliminated.
    pub fn iterative(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(
                "interaction matrix must be square and nonempty".into(),
            ));
        }
        let u = conjugate_gradient(a, &DVector::from_element(n, 1.0))?;
        if !(u.sum() > 0.0) {
            return Err(Error::Numerical("charge-equilibration system is singular".into()));
        }
        Ok(KktSolver::Iterative { matrix: a.clone(), u })
    }

    pub fn len(&self) -> usize {
        match self {
            KktSolver::Dense { values, .. } => values.len() - 1,
            KktSolver::Iterative { u, .. } => u.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Solves `A x + y 1 = b`, `1ᵀ x = c`.
    pub fn solve(&self, b: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
        let n = self.len();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side of length {} for {n} atoms",
                b.len()
            )));
        }
        match self {
            KktSolver::Dense { vectors, values } => {
                let mut rhs = DVector::zeros(n + 1);
                rhs.rows_mut(0, n).copy_from_slice(b);
                rhs[n] = c;
                let mut coef = vectors.tr_mul(&rhs);
                coef.component_div_assign(values);
                let sol = vectors * coef;
                Ok((sol.rows(0, n).iter().copied().collect(), sol[n]))
            }
            KktSolver::Iterative { matrix, u } => {
                let w = conjugate_gradient(matrix, &DVector::from_column_slice(b))?;
                let y = (w.sum() - c) / u.sum();
                let x = w - y * u;
                Ok((x.iter().copied().collect(), y))
            }
        }
    }
}

/// Solves the charge equilibration with a prepared factorization.
pub fn equilibrate_with(
    solver: &KktSolver,
    a: &DMatrix<f64>,
    chi: &[f64],
    total_charge: f64,
) -> Result<ChargeSolution> {
    let b: Vec<f64> = chi.iter().map(|c| -c).collect();
    let (q, y) = solver.solve(&b, total_charge)?;
    let mu = -y;
    let aq = a * DVector::from_column_slice(&q);
    let residual = chi
        .iter()
        .zip(aq.iter())
        .map(|(c, v)| (c + v - mu).abs())
        .fold(0.0, f64::max);
    if !residual.is_finite() || q.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "charge equilibration produced non-finite charges".into(),
        ));
    }
    Ok(ChargeSolution {
        charges: q,
        mu,
        residual,
    })
}

pub fn equilibrate_charges(sys: &QeqSystem) -> Result<ChargeSolution> {
    let solver = KktSolver::new(&sys.matrix)?;
    equilibrate_with(&solver, &sys.matrix, &sys.chi, sys.total_charge)
}

/// `Σ χ_i Q_i + ½ QᵀAQ`, with `a` the full interaction matrix.
pub fn electrostatic_energy(q: &[f64], a: &DMatrix<f64>, chi: &[f64]) -> f64 {
    let qv = DVector::from_column_slice(q);
    let linear: f64 = chi.iter().zip(q).map(|(c, q)| c * q).sum();
    linear + 0.5 * qv.dot(&(a * &qv))
}

/// Electronegativities predicted by the model.
pub fn electronegativities(s: &Structure, d: &DescriptorSet, m: &PotentialModel) -> Result<Vec<f64>> {
    m.check_compatible(s, d)?;
    Ok((0..s.len()).map(|i| m.chi(d.values(i))).collect())
}

/// Forces on fixed charges from the kernel alone: `-∇ ½ Σ_ij κ_ij Q_i Q_j`.
pub fn frozen_pair_forces(kernel: &Kernel, q: &[f64], n: usize) -> Vec<Vec3> {
    let mut f = vec![math::ZERO3; n];
    for p in &kernel.pairs {
        let g = math::scale(p.vector, q[p.i] * q[p.j] * p.derivative / p.distance);
        math::add_assign(&mut f[p.i], g);
        math::sub_assign(&mut f[p.j], g);
    }
    f
}

/// Electrostatic part of the model forces. With `frozen` the charges in
/// `solution` are held fixed (no charge response); otherwise they must be
/// the equilibrated charges of `s` and the response enters through one
/// adjoint solve.
pub fn electrostatic_forces(
    s: &Structure,
    d: &DescriptorSet,
    m: &PotentialModel,
    solution: &ChargeSolution,
    frozen: bool,
) -> Result<Vec<Vec3>> {
    let mode = if frozen {
        crate::potential::ChargeMode::Frozen(solution.charges.clone())
    } else {
        crate::potential::ChargeMode::Equilibrate
    };
    let p = crate::potential::predict_with(s, d, m, &mode)?;
    if !frozen {
        let drift = p
            .charges
            .iter()
            .zip(&solution.charges)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if drift > 1e-8 {
            return Err(Error::Data(
                "supplied charges are not the equilibrated charges of this structure".into(),
            ));
        }
    }
    Ok(p.elec_forces)
}
