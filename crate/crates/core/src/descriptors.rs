//! Atom-centered symmetry functions with analytic derivatives.
//!
//! Radial functions `Σ_j exp(-η(R_ij - r_s)²) f_c(R_ij)` and angular functions
//! `2^(1-ζ) Σ_{j<k} (1 + λ cos θ_ijk)^ζ exp(-η(R_ij² + R_ik² + R_jk²)) f_c f_c f_c`
//! with the cosine cutoff `f_c(R) = ½(cos(πR/R_c) + 1)`. The atomic number,
//! scaled by 0.1, is appended as the last feature.
//!
//! Derivatives are stored with respect to the central atom's minimum-image
//! neighbor vectors `r_ij = R_j - R_i`, which gives both position Jacobians
//! and per-atom virials without a second pass.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::neighbors::{NeighborList, DEFAULT_CUTOFF};
use crate::structure::Structure;

/// Scale applied to the atomic number feature.
pub const Z_FEATURE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialFunction {
    /// Gaussian exponent (Å⁻²).
    pub eta: f64,
    /// Gaussian center (Å).
    pub r_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularFunction {
    /// Gaussian exponent (Å⁻²).
    pub eta: f64,
    pub zeta: f64,
    /// ±1.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsfParams {
    /// Cutoff radius (Å).
    pub cutoff: f64,
    pub radial: Vec<RadialFunction>,
    pub angular: Vec<AngularFunction>,
    /// Weight each neighbor term by `Z_j/10` (and `Z_j Z_k/100` for triplets).
    pub element_resolved: bool,
}

impl Default for AcsfParams {
    fn default() -> Self {
        Self::default_grid(DEFAULT_CUTOFF)
    }
}

impl AcsfParams {
    /// 8 radial functions with η log-spaced over 0.01–2.0 Å⁻² (r_s = 0) and
    /// 8 angular functions ζ ∈ {1, 2, 4, 16} × λ ∈ {±1} at η = 0.005 Å⁻².
    pub fn default_grid(cutoff: f64) -> Self {
        let (lo, hi) = (0.01f64.ln(), 2.0f64.ln());
        let radial = (0..8)
            .map(|k| RadialFunction {
                eta: (lo + (hi - lo) * k as f64 / 7.0).exp(),
                r_s: 0.0,
            })
            .collect();
        let mut angular = Vec::new();
        for zeta in [1.0, 2.0, 4.0, 16.0] {
            for lambda in [1.0, -1.0] {
                angular.push(AngularFunction {
                    eta: 0.005,
                    zeta,
                    lambda,
                });
            }
        }
        AcsfParams {
            cutoff,
            radial,
            angular,
            element_resolved: false,
        }
    }

    /// 8 radial functions with η log-spaced over 0.01–1.0 Å⁻² (r_s = 0) and
    /// no angular terms; enough for pair-like interactions.
    pub fn radial_grid(cutoff: f64) -> Self {
        let (lo, hi) = (0.01f64.ln(), 1.0f64.ln());
        let radial = (0..8)
            .map(|k| RadialFunction {
                eta: (lo + (hi - lo) * k as f64 / 7.0).exp(),
                r_s: 0.0,
            })
            .collect();
        AcsfParams {
            cutoff,
            radial,
            angular: Vec::new(),
            element_resolved: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::Config(format!(
                "ACSF cutoff must be positive, got {}",
                self.cutoff
            )));
        }
        if self.radial.is_empty() && self.angular.is_empty() {
            return Err(Error::Config("at least one symmetry function is required".into()));
        }
        for r in &self.radial {
            if !(r.eta >= 0.0) || !r.r_s.is_finite() {
                return Err(Error::Config(format!("invalid radial function {r:?}")));
            }
        }
        for a in &self.angular {
            if !(a.eta >= 0.0) || !(a.zeta >= 1.0) || (a.lambda != 1.0 && a.lambda != -1.0) {
                return Err(Error::Config(format!("invalid angular function {a:?}")));
            }
        }
        Ok(())
    }

    /// Number of symmetry functions, excluding the atomic-number feature.
    pub fn n_symmetry(&self) -> usize {
        self.radial.len() + self.angular.len()
    }

    /// Length of each per-atom descriptor vector.
    pub fn n_features(&self) -> usize {
        self.n_symmetry() + 1
    }

    /// Feature index range of the radial functions.
    pub fn radial_range(&self) -> std::ops::Range<usize> {
        0..self.radial.len()
    }

    pub fn angular_range(&self) -> std::ops::Range<usize> {
        self.radial.len()..self.n_symmetry()
    }
}

/// Cutoff function and its derivative.
#[inline]
pub fn cutoff_fn(r: f64, rc: f64) -> (f64, f64) {
    if r >= rc {
        return (0.0, 0.0);
    }
    let x = PI * r / rc;
    (0.5 * (x.cos() + 1.0), -0.5 * PI / rc * x.sin())
}

/// Descriptor of one atom with its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDescriptor {
    pub values: Vec<f64>,
    /// Neighbor indices and minimum-image vectors from this atom.
    pub neighbors: Vec<(usize, Vec3)>,
    /// `∂G_k/∂r_e`, feature-major: entry `k * n_neighbors + e`.
    pub derivs: Vec<Vec3>,
}

impl AtomDescriptor {
    pub fn n_neighbors(&self) -> usize {
        self.neighbors.len()
    }

    pub fn deriv(&self, feature: usize, neighbor: usize) -> Vec3 {
        self.derivs[feature * self.neighbors.len() + neighbor]
    }

    /// `Σ_k w_k ∂G_k/∂r_e` for every neighbor `e`, restricted to `features`.
    pub fn contract_range(&self, weights: &[f64], features: std::ops::Range<usize>) -> Vec<Vec3> {
        let n = self.neighbors.len();
        let mut out = vec![math::ZERO3; n];
        for k in features {
            let w = weights[k];
            if w == 0.0 {
                continue;
            }
            let row = &self.derivs[k * n..(k + 1) * n];
            for (o, d) in out.iter_mut().zip(row) {
                o[0] += w * d[0];
                o[1] += w * d[1];
                o[2] += w * d[2];
            }
        }
        out
    }

    pub fn contract(&self, weights: &[f64]) -> Vec<Vec3> {
        self.contract_range(weights, 0..self.values.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub n_features: usize,
    pub atoms: Vec<AtomDescriptor>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.atoms[i].values
    }

    /// Sparse `∂G_i/∂R_β`: one entry per atom β with nonzero derivative,
    /// holding a 3-vector per feature.
    pub fn position_jacobian(&self, i: usize) -> Vec<(usize, Vec<Vec3>)> {
        let a = &self.atoms[i];
        let nf = self.n_features;
        let mut out: Vec<(usize, Vec<Vec3>)> = Vec::new();
        let mut own = vec![math::ZERO3; nf];
        for (e, &(j, _)) in a.neighbors.iter().enumerate() {
            let slot = match out.iter().position(|(b, _)| *b == j) {
                Some(p) => p,
                None => {
                    out.push((j, vec![math::ZERO3; nf]));
                    out.len() - 1
                }
            };
            for (k, own_k) in own.iter_mut().enumerate() {
                let d = a.deriv(k, e);
                math::add_assign(&mut out[slot].1[k], d);
                math::sub_assign(own_k, d);
            }
        }
        match out.iter_mut().find(|(b, _)| *b == i) {
            Some((_, v)) => {
                for (x, o) in v.iter_mut().zip(own) {
                    math::add_assign(x, o);
                }
            }
            None => out.push((i, own)),
        }
        out.sort_by_key(|(b, _)| *b);
        out
    }
}

/// Distributes per-neighbor gradients `v_e = ∂E/∂r_e` of atom `i`'s
/// contribution into position gradients and the atom's virial `Σ_e v_e ⊗ r_e`.
pub fn scatter_neighbor_gradients(
    atom: &AtomDescriptor,
    i: usize,
    grads: &[Vec3],
    position_grad: &mut [Vec3],
    virial: &mut Mat3,
) {
    for (&(j, r), &v) in atom.neighbors.iter().zip(grads) {
        math::add_assign(&mut position_grad[j], v);
        math::sub_assign(&mut position_grad[i], v);
        math::mat_add_assign(virial, &math::outer(v, r));
    }
}

fn element_weight(p: &AcsfParams, z: u8) -> f64 {
    if p.element_resolved {
        f64::from(z) * 0.1
    } else {
        1.0
    }
}

fn atom_descriptor(s: &Structure, nl: &NeighborList, p: &AcsfParams, i: usize) -> AtomDescriptor {
    let nf = p.n_features();
    let nr = p.radial.len();
    let rc = p.cutoff;
    let list = nl.of(i);
    let n = list.len();
    let mut values = vec![0.0; nf];
    let mut derivs = vec![math::ZERO3; nf * n];
    values[nf - 1] = Z_FEATURE_SCALE * f64::from(s.species[i]);

    let cut: Vec<(f64, f64)> = list.iter().map(|nb| cutoff_fn(nb.distance, rc)).collect();
    let weights: Vec<f64> = list.iter().map(|nb| element_weight(p, s.species[nb.index])).collect();

    for (e, nb) in list.iter().enumerate() {
        let r = nb.distance;
        let unit = math::scale(nb.vector, 1.0 / r);
        let (fc, dfc) = cut[e];
        for (k, f) in p.radial.iter().enumerate() {
            let dr = r - f.r_s;
            let g = (-f.eta * dr * dr).exp();
            values[k] += weights[e] * g * fc;
            let dval = weights[e] * g * (dfc - 2.0 * f.eta * dr * fc);
            math::add_assign(&mut derivs[k * n + e], math::scale(unit, dval));
        }
    }

    if !p.angular.is_empty() {
        for e1 in 0..n {
            let a = list[e1].vector;
            let ra = list[e1].distance;
            let (fa, dfa) = cut[e1];
            for e2 in (e1 + 1)..n {
                let b = list[e2].vector;
                let rb = list[e2].distance;
                let d = math::sub(b, a);
                let rjk = math::norm(d);
                if rjk >= rc || rjk == 0.0 {
                    continue;
                }
                let (fb, dfb) = cut[e2];
                let (fj, dfj) = cutoff_fn(rjk, rc);
                let cos = math::dot(a, b) / (ra * rb);
                let dcos_da = math::sub(math::scale(b, 1.0 / (ra * rb)), math::scale(a, cos / (ra * ra)));
                let dcos_db = math::sub(math::scale(a, 1.0 / (ra * rb)), math::scale(b, cos / (rb * rb)));
                let ua = math::scale(a, 1.0 / ra);
                let ub = math::scale(b, 1.0 / rb);
                let ud = math::scale(d, 1.0 / rjk);
                let fprod = fa * fb * fj;
                let df_dra = dfa * fb * fj;
                let df_drb = fa * dfb * fj;
                let df_drjk = fa * fb * dfj;
                let w = weights[e1] * weights[e2];
                let sq = ra * ra + rb * rb + rjk * rjk;
                for (k, f) in p.angular.iter().enumerate() {
                    let idx = nr + k;
                    let base = (1.0 + f.lambda * cos).max(0.0);
                    let (pw, dpw) = if f.zeta == 1.0 {
                        (base, f.lambda)
                    } else {
                        let b1 = base.powf(f.zeta - 1.0);
                        (b1 * base, f.zeta * f.lambda * b1)
                    };
                    let x = (-f.eta * sq).exp();
                    let pref = w * 2f64.powf(1.0 - f.zeta);
                    values[idx] += pref * pw * x * fprod;
                    // chain rule through cos θ, R_ij, R_ik and R_jk = |r_ik - r_ij|
                    let c_cos = pref * dpw * x * fprod;
                    let c_ra = pref * pw * x * (df_dra - 2.0 * f.eta * ra * fprod);
                    let c_rb = pref * pw * x * (df_drb - 2.0 * f.eta * rb * fprod);
                    let c_rjk = pref * pw * x * (df_drjk - 2.0 * f.eta * rjk * fprod);
                    let ga = [
                        c_cos * dcos_da[0] + c_ra * ua[0] - c_rjk * ud[0],
                        c_cos * dcos_da[1] + c_ra * ua[1] - c_rjk * ud[1],
                        c_cos * dcos_da[2] + c_ra * ua[2] - c_rjk * ud[2],
                    ];
                    let gb = [
                        c_cos * dcos_db[0] + c_rb * ub[0] + c_rjk * ud[0],
                        c_cos * dcos_db[1] + c_rb * ub[1] + c_rjk * ud[1],
                        c_cos * dcos_db[2] + c_rb * ub[2] + c_rjk * ud[2],
                    ];
                    math::add_assign(&mut derivs[idx * n + e1], ga);
                    math::add_assign(&mut derivs[idx * n + e2], gb);
                }
            }
        }
    }

    AtomDescriptor {
        values,
        neighbors: list.iter().map(|nb| (nb.index, nb.vector)).collect(),
        derivs,
    }
}

/// Computes descriptors and their derivatives for every atom.
pub fn compute_acsf(s: &Structure, nl: &NeighborList, p: &AcsfParams) -> Result<DescriptorSet> {
    p.validate()?;
    if nl.cutoff != p.cutoff {
        return Err(Error::DimensionMismatch(format!(
            "neighbor list cutoff {} differs from descriptor cutoff {}",
            nl.cutoff, p.cutoff
        )));
    }
    if nl.neighbors.len() != s.len() {
        return Err(Error::DimensionMismatch(
            "neighbor list does not match structure".into(),
        ));
    }
    let atoms = (0..s.len())
        .into_par_iter()
        .map(|i| atom_descriptor(s, nl, p, i))
        .collect();
    Ok(DescriptorSet {
        n_features: p.n_features(),
        atoms,
    })
}

/// Builds the neighbor list at the descriptor cutoff and computes descriptors.
pub fn describe(s: &Structure, p: &AcsfParams) -> Result<DescriptorSet> {
    let nl = crate::neighbors::build_neighbor_list(s, p.cutoff)?;
    compute_acsf(s, &nl, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::build_neighbor_list;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cluster(rng: &mut ChaCha8Rng, n: usize, species: &[u8]) -> Structure {
        let mut pos: Vec<Vec3> = Vec::new();
        while pos.len() < n {
            let c = [
                rng.random_range(0.0..4.5),
                rng.random_range(0.0..4.5),
                rng.random_range(0.0..4.5),
            ];
            if pos.iter().all(|p| math::norm(math::sub(*p, c)) > 1.2) {
                pos.push(c);
            }
        }
        let sp = (0..n).map(|i| species[i % species.len()]).collect();
        Structure::cluster(pos, sp).unwrap()
    }

    fn params(rc: f64, resolved: bool) -> AcsfParams {
        let mut p = AcsfParams::default_grid(rc);
        p.radial.push(RadialFunction { eta: 0.8, r_s: 2.0 });
        p.angular.push(AngularFunction {
            eta: 0.05,
            zeta: 3.5,
            lambda: -1.0,
        });
        p.element_resolved = resolved;
        p
    }

    #[test]
    fn isolated_atom_has_only_z_feature() {
        let s = Structure::cluster(vec![[1.0, 2.0, 3.0]], vec![50]).unwrap();
        let d = describe(&s, &AcsfParams::default()).unwrap();
        let v = d.values(0);
        assert_eq!(v.len(), 17);
        assert!(v[..16].iter().all(|&x| x == 0.0));
        assert!((v[16] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_cutoff() {
        let s = Structure::cluster(vec![[0.0; 3], [1.5, 0.0, 0.0]], vec![1, 1]).unwrap();
        let nl = build_neighbor_list(&s, 5.0).unwrap();
        assert!(compute_acsf(&s, &nl, &AcsfParams::default_grid(6.0)).is_err());
        let mut bad = AcsfParams::default_grid(5.0);
        bad.angular[0].lambda = 0.5;
        assert!(compute_acsf(&s, &nl, &bad).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for resolved in [false, true] {
            let p = params(5.0, resolved);
            let s = random_cluster(&mut rng, 8, &[6, 8]);
            let d = describe(&s, &p).unwrap();
            let h = 1e-5;
            let mut max_err: f64 = 0.0;
            for beta in 0..s.len() {
                for c in 0..3 {
                    let mut plus = s.clone();
                    plus.positions[beta][c] += h;
                    let mut minus = s.clone();
                    minus.positions[beta][c] -= h;
                    let dp = describe(&plus, &p).unwrap();
                    let dm = describe(&minus, &p).unwrap();
                    for i in 0..s.len() {
                        let jac = d.position_jacobian(i);
                        let analytic = jac.iter().find(|(b, _)| *b == beta).map(|(_, v)| v.clone());
                        for k in 0..p.n_features() {
                            let fd = (dp.values(i)[k] - dm.values(i)[k]) / (2.0 * h);
                            let an = analytic.as_ref().map_or(0.0, |v| v[k][c]);
                            max_err = max_err.max((fd - an).abs());
                        }
                    }
                }
            }
            assert!(max_err < 1e-7, "max jacobian error {max_err}");
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_cluster(&mut rng, 4, &[14]);
        let p = params(6.0, true);
        let d = describe(&s, &p).unwrap();
        let rot = math::rotation([0.3, -1.0, 0.4], 1.1);
        let t = s.rotated(&rot).translated([3.0, -7.0, 0.5]);
        let dt = describe(&t, &p).unwrap();
        for i in 0..s.len() {
            for (a, b) in d.values(i).iter().zip(dt.values(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn same_species_permutation_permutes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_cluster(&mut rng, 6, &[6, 6, 8]);
        let perm = [1, 0, 2, 4, 3, 5];
        let p = params(6.0, true);
        let d = describe(&s, &p).unwrap();
        let dp = describe(&s.permuted(&perm), &p).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            for (a, b) in dp.values(k).iter().zip(d.values(old)) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn vanishes_smoothly_at_cutoff() {
        let rc = 6.0;
        let p = AcsfParams::default_grid(rc);
        let peak_s = Structure::cluster(vec![[0.0; 3], [0.5, 0.0, 0.0]], vec![1, 1]).unwrap();
        let peak = describe(&peak_s, &p).unwrap().values(0)[0];
        let near = Structure::cluster(vec![[0.0; 3], [rc - 1e-6, 0.0, 0.0]], vec![1, 1]).unwrap();
        let d = describe(&near, &p).unwrap();
        for k in 0..p.n_symmetry() {
            assert!(d.values(0)[k].abs() < 1e-8 * peak);
        }
        // derivative decays linearly towards the cutoff
        let mid = Structure::cluster(vec![[0.0; 3], [rc - 1e-3, 0.0, 0.0]], vec![1, 1]).unwrap();
        let dm = describe(&mid, &p).unwrap();
        let ratio = math::norm(d.atoms[0].deriv(0, 0)) / math::norm(dm.atoms[0].deriv(0, 0));
        assert!(ratio < 2e-3, "ratio {ratio}");
    }

    #[test]
    fn z_feature_has_zero_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_cluster(&mut rng, 5, &[3, 8]);
        let p = params(5.0, false);
        let d = describe(&s, &p).unwrap();
        let z = p.n_features() - 1;
        for a in &d.atoms {
            for e in 0..a.n_neighbors() {
                assert_eq!(a.deriv(z, e), math::ZERO3);
            }
        }
    }
}
