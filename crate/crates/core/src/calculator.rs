//! Energy/force/virial providers used by relaxation, cycling and the
//! elastic-constant driver.

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::structure::Structure;

/// Result of one energy evaluation.
///
/// `atom_virials[i]` is atom `i`'s share of `∂E/∂ε` (eV), so that the static
/// stress is `Σ_i W_i / V` with positive entries meaning tension.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub atom_virials: Vec<Mat3>,
}

impl Evaluation {
    pub fn zero(n: usize) -> Self {
        Evaluation {
            energy: 0.0,
            forces: vec![math::ZERO3; n],
            atom_virials: vec![math::ZERO33; n],
        }
    }

    pub fn virial(&self) -> Mat3 {
        let mut w = math::ZERO33;
        for a in &self.atom_virials {
            math::mat_add_assign(&mut w, a);
        }
        w
    }

    /// Static stress (eV/Å³) for a cell of volume `volume`.
    pub fn stress(&self, volume: f64) -> Result<Mat3> {
        if !(volume > 0.0) {
            return Err(Error::Geometry("stress requires a positive volume".into()));
        }
        Ok(math::mat_scale(&self.virial(), 1.0 / volume))
    }

    pub fn max_force(&self) -> f64 {
        self.forces.iter().map(|f| math::norm(*f)).fold(0.0, f64::max)
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = self.energy.is_finite()
            && self.forces.iter().flatten().all(|x| x.is_finite())
            && self.atom_virials.iter().flatten().flatten().all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Numerical("calculator returned non-finite values".into()))
        }
    }
}

pub trait Calculator: Sync {
    fn evaluate(&self, s: &Structure) -> Result<Evaluation>;

    fn name(&self) -> String;
}

/// Non-interacting atoms: zero energy, forces and stress.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullCalculator;

impl Calculator for NullCalculator {
    fn evaluate(&self, s: &Structure) -> Result<Evaluation> {
        Ok(Evaluation::zero(s.len()))
    }

    fn name(&self) -> String {
        "null".into()
    }
}

impl<C: Calculator + ?Sized> Calculator for &C {
    fn evaluate(&self, s: &Structure) -> Result<Evaluation> {
        (**self).evaluate(s)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<C: Calculator + ?Sized + Send> Calculator for Box<C> {
    fn evaluate(&self, s: &Structure) -> Result<Evaluation> {
        (**self).evaluate(s)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}
