#![allow(dead_code)]

use mamforge_core::descriptors::AcsfParams;
use mamforge_core::math::{self, Vec3};
use mamforge_core::potential::{ModelSpec, PotentialModel, Standardization};
use mamforge_core::{descriptors, Structure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random points in a box with a minimum separation.
pub fn scatter(rng: &mut ChaCha8Rng, n: usize, edge: f64, min_dist: f64) -> Vec<Vec3> {
    let mut pos: Vec<Vec3> = Vec::new();
    while pos.len() < n {
        let c = [
            rng.random_range(0.0..edge),
            rng.random_range(0.0..edge),
            rng.random_range(0.0..edge),
        ];
        if pos.iter().all(|p| math::norm(math::sub(*p, c)) > min_dist) {
            pos.push(c);
        }
    }
    pos
}

pub fn cluster(rng: &mut ChaCha8Rng, n: usize, species: &[u8]) -> Structure {
    let pos = scatter(rng, n, 4.5, 1.3);
    Structure::cluster(pos, (0..n).map(|i| species[i % species.len()]).collect()).unwrap()
}

/// Periodic cell, slightly sheared, with atoms at least 1.3 Å apart under
/// the minimum image.
pub fn periodic_cell(rng: &mut ChaCha8Rng, n: usize, species: &[u8], edge: f64) -> Structure {
    let cell = [[edge, 0.0, 0.0], [0.3, edge * 1.02, 0.0], [-0.2, 0.25, edge * 0.98]];
    loop {
        let frac = scatter(rng, n, 1.0, 0.0);
        let pos: Vec<Vec3> = frac.iter().map(|f| math::vec_mat(*f, &cell)).collect();
        let s = Structure::new(
            cell,
            [true; 3],
            pos,
            (0..n).map(|i| species[i % species.len()]).collect(),
        )
        .unwrap();
        let ok = (0..n).all(|i| ((i + 1)..n).all(|j| math::norm(s.displacement(i, j)) > 1.3));
        if ok {
            return s;
        }
    }
}

/// Randomly initialised model with standardization fitted on `fit`.
pub fn model(electrostatics: bool, cutoff: f64, elements: &[u8], seed: u64, fit: &[&Structure]) -> PotentialModel {
    let spec = ModelSpec {
        acsf: AcsfParams::default_grid(cutoff),
        hidden: vec![10, 8],
        elements: elements.to_vec(),
        use_electrostatics: electrostatics,
        use_charge_input: None,
        elec_cutoff: None,
        seed,
    };
    let mut m = PotentialModel::new(&spec).unwrap();
    let sets: Vec<_> = fit.iter().map(|s| descriptors::describe(s, &m.acsf).unwrap()).collect();
    let rows = sets.iter().flat_map(|d| d.atoms.iter().map(|a| a.values.as_slice()));
    m.standardization = Standardization::fit(m.n_features(), rows);
    m
}
