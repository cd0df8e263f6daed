//! Shifted-force Lennard-Jones pair potential.
//!
//! Serves as an independent analytic reference: label generator for
//! synthetic training data and the test calculator for relaxation, elastic
//! constants and cycling.

use serde::{Deserialize, Serialize};

use crate::calculator::{Calculator, Evaluation};
use crate::error::{Error, Result};
use crate::math;
use crate::neighbors::build_neighbor_list;
use crate::structure::{self, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOracle {
    /// Well depth (eV).
    pub epsilon: f64,
    /// Zero crossing of the bare potential (Å).
    pub sigma: f64,
    /// Truncation radius (Å).
    pub cutoff: f64,
}

impl Default for PairOracle {
    fn default() -> Self {
        PairOracle {
            epsilon: 0.1,
            sigma: 2.5,
            cutoff: 6.0,
        }
    }
}

fn lj(eps: f64, sigma: f64, r: f64) -> (f64, f64) {
    let sr6 = (sigma / r).powi(6);
    let e = 4.0 * eps * (sr6 * sr6 - sr6);
    let de = 4.0 * eps * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r;
    (e, de)
}

impl PairOracle {
    pub fn new(epsilon: f64, sigma: f64, cutoff: f64) -> Result<Self> {
        let p = PairOracle { epsilon, sigma, cutoff };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.sigma > 0.0) || !(self.cutoff > self.sigma) {
            return Err(Error::Config(format!(
                "pair potential needs epsilon >= 0, sigma > 0 and cutoff > sigma, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Pair energy and its radial derivative.
    pub fn pair(&self, r: f64) -> (f64, f64) {
        if r >= self.cutoff {
            return (0.0, 0.0);
        }
        let (e, de) = lj(self.epsilon, self.sigma, r);
        let (ec, dec) = lj(self.epsilon, self.sigma, self.cutoff);
        (e - ec - (r - self.cutoff) * dec, de - dec)
    }

    /// Minimum of the truncated pair curve (Å), by bisection on the derivative.
    pub fn r_min(&self) -> f64 {
        let (mut lo, mut hi) = (0.8 * self.sigma, self.cutoff);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.pair(mid).1 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// FCC crystal at the lattice constant where the static pressure vanishes.
    pub fn zero_pressure_fcc(&self, reps: usize, z: u8) -> Result<Structure> {
        let trace = |a: f64| -> Result<f64> {
            let s = structure::fcc(a, reps, z)?;
            let st = self.evaluate(&s)?.stress(s.volume())?;
            Ok(st[0][0] + st[1][1] + st[2][2])
        };
        let a0 = std::f64::consts::SQRT_2 * self.r_min();
        let (mut lo, mut hi) = (0.9 * a0, 1.05 * a0);
        let (t_lo, t_hi) = (trace(lo)?, trace(hi)?);
        if !(t_lo < 0.0 && t_hi > 0.0) {
            return Err(Error::Numerical("no zero-pressure lattice constant in bracket".into()));
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if trace(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        structure::fcc(0.5 * (lo + hi), reps, z)
    }
}

impl Calculator for PairOracle {
    fn evaluate(&self, s: &Structure) -> Result<Evaluation> {
        self.validate()?;
        let nl = build_neighbor_list(s, self.cutoff)?;
        let mut ev = Evaluation::zero(s.len());
        for i in 0..s.len() {
            for nb in nl.of(i) {
                let (e, de) = self.pair(nb.distance);
                ev.energy += 0.5 * e;
                // gradient with respect to r_ij = R_j - R_i
                let g = math::scale(nb.vector, de / nb.distance);
                math::add_assign(&mut ev.forces[i], g);
                // each ordered pair carries half the pair virial
                math::mat_add_assign(&mut ev.atom_virials[i], &math::outer(math::scale(g, 0.5), nb.vector));
            }
        }
        Ok(ev)
    }

    fn name(&self) -> String {
        format!(
            "oracle:lj(epsilon={},sigma={},cutoff={})",
            self.epsilon, self.sigma, self.cutoff
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::apply_strain;

    #[test]
    fn pair_curve_is_continuous_and_smooth_at_cutoff() {
        let p = PairOracle::default();
        let (e, de) = p.pair(p.cutoff - 1e-9);
        assert!(e.abs() < 1e-12 && de.abs() < 1e-9);
        assert_eq!(p.pair(p.cutoff + 1.0), (0.0, 0.0));
    }

    #[test]
    fn dimer_forces_are_pairwise_and_match_derivative() {
        let p = PairOracle::default();
        let s = Structure::cluster(vec![[0.0; 3], [3.1, 0.0, 0.0]], vec![18, 18]).unwrap();
        let ev = p.evaluate(&s).unwrap();
        let (e, de) = p.pair(3.1);
        assert!((ev.energy - e).abs() < 1e-15);
        assert!((ev.forces[0][0] - de).abs() < 1e-15);
        assert!((ev.forces[1][0] + de).abs() < 1e-15);
        let h = 1e-6;
        let fd = (p.pair(3.1 + h).0 - p.pair(3.1 - h).0) / (2.0 * h);
        assert!((fd - de).abs() < 1e-8);
    }

    #[test]
    fn r_min_is_stationary() {
        let p = PairOracle::default();
        let r = p.r_min();
        assert!(p.pair(r).1.abs() < 1e-12);
        assert!((r - 2f64.powf(1.0 / 6.0) * p.sigma).abs() < 0.02);
    }

    #[test]
    fn virial_matches_strain_derivative() {
        let p = PairOracle::default();
        let cell = [[13.0, 0.0, 0.0], [0.5, 12.5, 0.0], [0.3, -0.2, 12.8]];
        let pos = vec![[0.0; 3], [3.0, 0.4, 0.1], [1.0, 2.9, -0.3], [11.5, 12.0, 0.9]];
        let s = Structure::new(cell, [true; 3], pos, vec![18; 4]).unwrap();
        let w = p.evaluate(&s).unwrap().virial();
        let h = 1e-6;
        for a in 0..3 {
            for b in a..3 {
                let mut e = math::ZERO33;
                e[a][b] = h;
                e[b][a] = h;
                let ep = p.evaluate(&apply_strain(&s, &e).unwrap()).unwrap().energy;
                let em = p
                    .evaluate(&apply_strain(&s, &math::mat_scale(&e, -1.0)).unwrap())
                    .unwrap()
                    .energy;
                let scale = if a == b { 1.0 } else { 2.0 };
                let fd = (ep - em) / (2.0 * h * scale);
                assert!((fd - w[a][b]).abs() < 1e-7, "{a}{b}: {fd} vs {}", w[a][b]);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PairOracle::new(0.1, 2.5, 2.0).is_err());
        assert!(PairOracle::new(-1.0, 2.5, 6.0).is_err());
    }
}
