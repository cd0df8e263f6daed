#![allow(clippy::needless_range_loop)]

mod common;

use common::{cluster, model, periodic_cell, rng};
use mamforge_core::descriptors::describe;
use mamforge_core::math::{self, Mat3};
use mamforge_core::potential::{
    kinetic_stress, predict, predict_with, short_range_energy, short_range_forces, static_stress, ChargeMode,
    PotentialModel,
};
use mamforge_core::structure::{apply_strain, replicate};
use mamforge_core::{ErrorKind, Structure};

fn energy(s: &Structure, m: &PotentialModel) -> f64 {
    predict(s, m).unwrap().energy
}

fn frozen_energy(s: &Structure, m: &PotentialModel, q: &[f64]) -> f64 {
    let d = describe(s, &m.acsf).unwrap();
    predict_with(s, &d, m, &ChargeMode::Frozen(q.to_vec())).unwrap().energy
}

/// Fourth-order central differences of `-e` with step `h`.
fn max_fd_force_error(s: &Structure, forces: &[[f64; 3]], h: f64, e: impl Fn(&Structure) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..s.len() {
        for c in 0..3 {
            let at = |k: f64| {
                let mut t = s.clone();
                t.positions[a][c] += k * h;
                e(&t)
            };
            let fd = -(8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h);
            worst = worst.max((fd - forces[a][c]).abs());
        }
    }
    worst
}

fn strain_fd(s: &Structure, h: f64, e: impl Fn(&Structure) -> f64) -> Mat3 {
    let mut out = math::ZERO33;
    for p in 0..3 {
        for q in p..3 {
            let mut eps = math::ZERO33;
            eps[p][q] = h;
            eps[q][p] = h;
            let ep = e(&apply_strain(s, &eps).unwrap());
            let em = e(&apply_strain(s, &math::mat_scale(&eps, -1.0)).unwrap());
            let mult = if p == q { 1.0 } else { 2.0 };
            let w = (ep - em) / (2.0 * h * mult) / s.volume();
            out[p][q] = w;
            out[q][p] = w;
        }
    }
    out
}

#[test]
fn isolated_atom_energy_is_reference_output() {
    let s = Structure::cluster(vec![[0.0; 3]], vec![8]).unwrap();
    let m = model(false, 5.0, &[8], 1, &[]);
    let d = describe(&s, &m.acsf).unwrap();
    let (e, atoms) = short_range_energy(&s, &d, &m, None).unwrap();
    let mut g = vec![0.0; m.n_features()];
    *g.last_mut().unwrap() = 0.8;
    assert_eq!(e, m.atomic_energy(&g, None));
    assert_eq!(atoms.len(), 1);
}

#[test]
fn short_range_forces_match_differences() {
    let mut r = rng(10);
    for trial in 0..3 {
        let s = cluster(&mut r, 8, &[3, 8]);
        let m = model(false, 5.0, &[3, 8], trial, &[&s]);
        let d = describe(&s, &m.acsf).unwrap();
        let f = short_range_forces(&s, &d, &m, None).unwrap();
        let err = max_fd_force_error(&s, &f, 1e-4, |t| {
            let dt = describe(t, &m.acsf).unwrap();
            short_range_energy(t, &dt, &m, None).unwrap().0
        });
        assert!(err < 1e-6, "trial {trial}: {err}");
        let net = f.iter().fold(math::ZERO3, |a, b| math::add(a, *b));
        assert!(math::norm(net) < 1e-8);
    }
}

#[test]
fn symmetric_dimer_forces_are_opposite_and_axial() {
    let s = Structure::cluster(vec![[0.0; 3], [1.1, 0.7, -0.4]], vec![6, 6]).unwrap();
    let m = model(false, 5.0, &[6], 4, &[&s]);
    let p = predict(&s, &m).unwrap();
    let axis = math::sub(s.positions[1], s.positions[0]);
    for k in 0..3 {
        assert!((p.forces[0][k] + p.forces[1][k]).abs() < 1e-12);
    }
    let cross = math::cross(p.forces[0], axis);
    assert!(math::norm(cross) < 1e-12);
}

#[test]
fn equilibrated_forces_match_differences_with_reequilibration() {
    let mut r = rng(20);
    for trial in 0..3 {
        let s = cluster(&mut r, 8, &[3, 8]);
        let m = model(true, 5.0, &[3, 8], 100 + trial, &[&s]);
        let p = predict(&s, &m).unwrap();
        assert!(p.charges.iter().any(|q| q.abs() > 1e-3));
        let err = max_fd_force_error(&s, &p.forces, 1e-4, |t| energy(t, &m));
        assert!(err < 1e-5, "trial {trial}: {err}");
    }
}

#[test]
fn frozen_charge_forces_match_differences_at_fixed_charges() {
    let mut r = rng(30);
    let s = cluster(&mut r, 8, &[3, 8]);
    let m = model(true, 5.0, &[3, 8], 7, &[&s]);
    let q: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
    let d = describe(&s, &m.acsf).unwrap();
    let p = predict_with(&s, &d, &m, &ChargeMode::Frozen(q.clone())).unwrap();
    let err = max_fd_force_error(&s, &p.forces, 1e-4, |t| frozen_energy(t, &m, &q));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn energy_is_sum_of_parts_and_disabled_path_is_short_range() {
    let mut r = rng(40);
    let s = cluster(&mut r, 6, &[3, 8]);
    let m = model(true, 5.0, &[3, 8], 2, &[&s]);
    let p = predict(&s, &m).unwrap();
    assert!((p.energy - (p.short_energy + p.elec_energy)).abs() < 1e-10);
    assert!((p.charges.iter().sum::<f64>() - s.total_charge).abs() < 1e-10);

    let off = model(false, 5.0, &[3, 8], 2, &[&s]);
    let p = predict(&s, &off).unwrap();
    assert_eq!(p.elec_energy, 0.0);
    assert!(p.charges.iter().all(|q| *q == 0.0));
    assert!(p.elec_forces.iter().flatten().all(|x| *x == 0.0));
    assert_eq!(p.energy, p.short_energy);
}

#[test]
fn symmetric_neutral_dimer_has_no_charge_or_elec_force() {
    let s = Structure::cluster(vec![[0.0; 3], [1.4, 0.0, 0.0]], vec![8, 8]).unwrap();
    let m = model(true, 5.0, &[8], 9, &[&s]);
    let p = predict(&s, &m).unwrap();
    assert!(p.charges.iter().all(|q| q.abs() < 1e-12));
    assert!(p.elec_forces.iter().flatten().all(|x| x.abs() < 1e-10));
}

#[test]
fn static_stress_matches_strain_differences() {
    let mut r = rng(50);
    for electro in [false, true] {
        let s = periodic_cell(&mut r, 8, &[3, 8], 8.6);
        let mut m = model(electro, 4.2, &[3, 8], 11, &[&s]);
        m.elec_cutoff = Some(4.2);
        let p = predict(&s, &m).unwrap();
        let sigma = p.static_stress.unwrap();
        let fd = strain_fd(&s, 1e-6, |t| energy(t, &m));
        assert!(math::max_abs_diff(&sigma, &fd) < 1e-6, "{sigma:?} vs {fd:?}");
        assert!(math::max_abs_diff(&sigma, &math::transpose(&sigma)) < 1e-8);
        if !electro {
            let d = describe(&s, &m.acsf).unwrap();
            let only = static_stress(&s, &d, &m, None).unwrap();
            assert!(math::max_abs_diff(&only, &sigma) < 1e-12);
        }
    }
}

#[test]
fn radial_and_angular_parts_add_up() {
    let mut r = rng(55);
    let s = periodic_cell(&mut r, 8, &[3, 8], 8.6);
    let mut m = model(true, 4.2, &[3, 8], 12, &[&s]);
    m.elec_cutoff = Some(4.2);
    let p = predict(&s, &m).unwrap();
    let mut sum = p.virial_radial;
    math::mat_add_assign(&mut sum, &p.virial_angular);
    math::mat_add_assign(&mut sum, &p.virial_pair);
    assert!(math::max_abs_diff(&sum, &p.virial()) < 1e-10);
}

#[test]
fn kinetic_stress_unit_case() {
    let cell = [[100.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut s = Structure::new(cell, [true; 3], vec![[0.0; 3]], vec![1]).unwrap();
    s.masses = vec![1.0];
    s.velocities = Some(vec![[1.0, 0.0, 0.0]]);
    let k = kinetic_stress(&s, None).unwrap();
    assert!((k[0][0] - 1.03642691).abs() < 1e-8);
    for p in 0..3 {
        for q in 0..3 {
            if (p, q) != (0, 0) {
                assert_eq!(k[p][q], 0.0);
            }
        }
    }
    s.velocities = Some(vec![[0.0; 3]]);
    assert_eq!(kinetic_stress(&s, None).unwrap(), math::ZERO33);
    s.velocities = None;
    assert_eq!(kinetic_stress(&s, None).unwrap_err().kind(), ErrorKind::Data);
}

#[test]
fn opposite_velocities_add() {
    let mut s = Structure::cluster(vec![[0.0; 3], [3.0, 0.0, 0.0]], vec![1, 1]).unwrap();
    s.velocities = Some(vec![[0.1, 0.2, 0.0], [-0.1, -0.2, 0.0]]);
    let k = kinetic_stress(&s, Some(50.0)).unwrap();
    let one = s.masses[0] * 0.01 * 103.642691 / 50.0;
    assert!((k[0][0] - 2.0 * one).abs() < 1e-14);
    assert!(kinetic_stress(&s, None).is_err());
}

#[test]
fn extensive_under_replication() {
    let mut r = rng(60);
    let s = periodic_cell(&mut r, 4, &[3, 8], 8.6);
    let m = model(false, 4.2, &[3, 8], 5, &[&s]);
    let e1 = energy(&s, &m);
    let big = replicate(&s, 2, 2, 2).unwrap();
    let e8 = energy(&big, &m);
    assert!((e8 - 8.0 * e1).abs() <= 1e-9 * e8.abs().max(1.0));
}

#[test]
fn invariant_under_rigid_motion_and_permutation() {
    let mut r = rng(70);
    let s = cluster(&mut r, 7, &[3, 8]);
    let m = model(true, 5.0, &[3, 8], 6, &[&s]);
    let p = predict(&s, &m).unwrap();
    let rot = math::rotation([0.2, 0.9, -0.3], 2.3);
    let moved = s.rotated(&rot).translated([10.0, -4.0, 3.0]);
    let pm = predict(&moved, &m).unwrap();
    assert!((p.energy - pm.energy).abs() < 1e-9);
    for (f, g) in p.forces.iter().zip(&pm.forces) {
        let expect = math::mat_vec(&rot, *f);
        for k in 0..3 {
            assert!((expect[k] - g[k]).abs() < 1e-8);
        }
    }
    // swap two lithium atoms (indices 0 and 2)
    let perm = [2, 1, 0, 3, 4, 5, 6];
    let pp = predict(&s.permuted(&perm), &m).unwrap();
    assert!((pp.energy - p.energy).abs() <= 1e-12 * p.energy.abs().max(1.0));
    for (k, &old) in perm.iter().enumerate() {
        for c in 0..3 {
            assert!((pp.forces[k][c] - p.forces[old][c]).abs() < 1e-10);
        }
    }
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    let mut r = rng(80);
    let s = cluster(&mut r, 5, &[3, 8]);
    let m = model(true, 5.0, &[3, 8], 3, &[&s]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = PotentialModel::load(&path).unwrap();
    assert_eq!(m, back);
    let a = predict(&s, &m).unwrap();
    let b = predict(&s, &back).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unsupported_element_is_a_data_error() {
    let s = Structure::cluster(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![3, 26]).unwrap();
    let m = model(false, 5.0, &[3, 8], 3, &[]);
    assert_eq!(predict(&s, &m).unwrap_err().kind(), ErrorKind::Data);
}

#[test]
fn corrupted_model_file_is_rejected() {
    let m = model(false, 5.0, &[8], 3, &[]);
    let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
    v["format_version"] = serde_json::json!(99);
    assert!(PotentialModel::from_json(&v.to_string()).is_err());
    assert!(PotentialModel::from_json("{").is_err());
}
