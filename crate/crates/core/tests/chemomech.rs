mod common;

use mamforge_core::calculator::NullCalculator;
use mamforge_core::chemomech::*;
use mamforge_core::math::{self, Vec3};
use mamforge_core::oracle::PairOracle;
use mamforge_core::structure;
use mamforge_core::Structure;
use proptest::prelude::*;
use std::sync::OnceLock;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn work_of_separation_cases() {
    let w = work_of_separation(&EnergyTriple::new(-10.0, -5.0, -15.0, 3.0).unwrap()).unwrap();
    assert_eq!(w.ev_per_a2, 0.0);
    let w = work_of_separation(&EnergyTriple::new(-10.0, -5.0, -16.0, 10.0).unwrap()).unwrap();
    assert!(close(w.ev_per_a2, 0.1, 1e-12));
    assert!(close(w.j_per_m2, 1.6021766, 1e-12));
    assert!(EnergyTriple::new(1.0, 1.0, 1.0, 0.0).is_err());
}

#[test]
fn potential_gradient_cases() {
    assert_eq!(potential_gradient(-2.0, -2.0, 3.0).unwrap(), 0.0);
    assert!(close(potential_gradient(-3.0, -5.0, 4.0).unwrap(), 0.5, 1e-12));
    assert!(close(potential_gradient(-5.0, -3.0, 4.0).unwrap(), -0.5, 1e-12));
    assert!(potential_gradient(1.0, 0.0, 0.0).is_err());
    assert!(potential_gradient(1.0, 0.0, -1.0).is_err());
}

#[test]
fn formation_energy_cases() {
    assert_eq!(interphase_formation_energy(-7.5, -7.5), 0.0);
    assert!(close(interphase_formation_energy(-100.0, -98.0), -2.0, 1e-12));
    assert_eq!(sei_formation_energy(-206.0, -10.0, -196.0, 3).unwrap(), 0.0);
    assert!(close(
        sei_formation_energy(-210.0, -10.0, -196.0, 4).unwrap(),
        -1.0,
        1e-12
    ));
    assert!(close(
        sei_formation_energy(-210.0, -10.0, -196.0, 8).unwrap(),
        -0.5,
        1e-12
    ));
    assert!(sei_formation_energy(-1.0, 0.0, 0.0, 0).is_err());
}

#[test]
fn voltage_and_kinetics_cases() {
    assert_eq!(intercalation_voltage(0.0, 1).unwrap(), 0.0);
    assert!(close(intercalation_voltage(-3.0, 2).unwrap(), 1.5, 1e-12));
    assert!(intercalation_voltage(0.4, 1).unwrap() < 0.0);
    assert!(intercalation_voltage(1.0, 0).is_err());

    let k = diffusion_kinetics(1e-5, 1e-12).unwrap();
    assert!(close(k.tau_s, 100.0, 1e-12 * 100.0));
    assert!(close(k.c_rate_per_h, 36.0, 1e-12 * 36.0));
    let k10 = diffusion_kinetics(1e-6, 1e-12).unwrap();
    assert!(close(k10.c_rate_per_h / k.c_rate_per_h, 100.0, 1e-9));
    assert!(close(k.tau_s / k10.tau_s, 100.0, 1e-9));
    assert!(diffusion_kinetics(0.0, 1.0).is_err());
    assert!(diffusion_kinetics(1.0, -1.0).is_err());
}

#[test]
fn moduli_cases() {
    let iso = VoigtTensor::isotropic(1.0, 1.0);
    assert_eq!(iso.c[0][0], 3.0);
    let m = voigt_moduli(&iso).unwrap();
    assert!(close(m.bulk_gpa, 5.0 / 3.0, 1e-12));
    assert!(close(m.shear_gpa, 1.0, 1e-12));

    let m = voigt_moduli(&VoigtTensor::cubic(100.0, 50.0, 30.0)).unwrap();
    assert!(close(m.bulk_gpa, 200.0 / 3.0, 1e-12));
    assert!(close(m.shear_gpa, 28.0, 1e-12));
    let b = m.bulk_gpa;
    let g = m.shear_gpa;
    assert!(close(m.young_gpa, 9.0 * b * g / (3.0 * b + g), 1e-12));

    let zero = VoigtTensor::new([[0.0; 6]; 6]).unwrap();
    assert_eq!(bulk_shear(&zero), (0.0, 0.0));
    assert!(voigt_moduli(&zero).is_err());

    let mut c = [[0.0; 6]; 6];
    c[0][1] = 1.0;
    assert!(VoigtTensor::new(c).is_err());
}

#[test]
fn sliding_traction_flat_and_sine() {
    let l: Vec<f64> = (0..10).map(|k| k as f64 * 0.3).collect();
    let t = sliding_traction(&SlidingProfile::new(l.clone(), vec![0.7; 10]).unwrap()).unwrap();
    assert!(t.traction.iter().all(|x| *x == 0.0));
    assert_eq!(t.tau_max, 0.0);

    let (w0, a, period) = (0.4, 0.05, 3.2);
    let l: Vec<f64> = (0..64).map(|k| period * k as f64 / 63.0).collect();
    let w: Vec<f64> = l
        .iter()
        .map(|x| w0 + a * (2.0 * std::f64::consts::PI * x / period).sin())
        .collect();
    let t = sliding_traction(&SlidingProfile::new(l, w).unwrap()).unwrap();
    let exact = 2.0 * std::f64::consts::PI * a / period;
    assert!((t.tau_max - exact).abs() / exact < 0.01, "{} vs {exact}", t.tau_max);
}

#[test]
fn sliding_profile_validation() {
    assert!(SlidingProfile::new(vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
    assert!(SlidingProfile::new(vec![0.0, 1.0, 1.0], vec![0.0; 3]).is_err());
    assert!(SlidingProfile::new(vec![0.0, 2.0, 1.0], vec![0.0; 3]).is_err());
    assert!(SlidingProfile::new(vec![0.0, 1.0, 2.0], vec![0.0; 2]).is_err());
}

fn regular_octahedron(a: f64, center: Vec3) -> Structure {
    let mut pos = vec![center];
    for k in 0..3 {
        for s in [1.0, -1.0] {
            let mut p = [0.0; 3];
            p[k] = s * a;
            pos.push(p);
        }
    }
    Structure::cluster(pos, vec![22, 8, 8, 8, 8, 8, 8]).unwrap()
}

const LIGANDS: [usize; 6] = [1, 2, 3, 4, 5, 6];

#[test]
fn regular_octahedron_is_undistorted() {
    let d = octahedral_distortion(&regular_octahedron(2.0, [0.0; 3]), 0, &LIGANDS).unwrap();
    assert!(d.angle_variance.abs() < 1e-20);
    assert!(close(d.quadratic_elongation, 1.0, 1e-14));
    assert!(d.off_center < 1e-15);
    assert!(close(d.volume, 4.0 / 3.0 * 8.0, 1e-12));
}

#[test]
fn off_center_is_centroid_distance() {
    let d = octahedral_distortion(&regular_octahedron(2.0, [0.2, 0.0, 0.0]), 0, &LIGANDS).unwrap();
    assert!(close(d.off_center, 0.2, 1e-14));
}

#[test]
fn stretched_axial_bond_matches_bipyramid_geometry() {
    let a = 2.0;
    let mut s = regular_octahedron(a, [0.0; 3]);
    s.positions[5][2] *= 1.1;
    let d = octahedral_distortion(&s, 0, &LIGANDS).unwrap();
    // two square pyramids on a square of diagonal 2a
    let volume = (2.0 * a * a) * (1.1 * a + a) / 3.0;
    let l0 = (0.75 * volume).cbrt();
    let lam = (5.0 * a * a + 1.21 * a * a) / (6.0 * l0 * l0);
    assert!(close(d.volume, volume, 1e-10));
    assert!(close(d.quadratic_elongation, lam, 1e-10));
    assert!(d.angle_variance.abs() < 1e-10);
}

/// Brute-force reference: the three widest angles are taken as trans pairs;
/// volume from tetrahedra on the center atom over faces of mutually cis
/// ligands.
fn brute_force(vs: &[Vec3]) -> (f64, f64) {
    let ang = |i: usize, j: usize| {
        (math::dot(vs[i], vs[j]) / (math::norm(vs[i]) * math::norm(vs[j])))
            .acos()
            .to_degrees()
    };
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            all.push((ang(i, j), i, j));
        }
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let trans: Vec<(usize, usize)> = all[..3].iter().map(|t| (t.1, t.2)).collect();
    let var = all[3..].iter().map(|t| (t.0 - 90.0).powi(2)).sum::<f64>() / 11.0;
    let is_trans = |i: usize, j: usize| trans.contains(&(i.min(j), i.max(j)));
    let mut vol = 0.0;
    for i in 0..6 {
        for j in i + 1..6 {
            for k in j + 1..6 {
                if !is_trans(i, j) && !is_trans(i, k) && !is_trans(j, k) {
                    vol += math::dot(vs[i], math::cross(vs[j], vs[k])).abs() / 6.0;
                }
            }
        }
    }
    let l0 = (0.75 * vol).cbrt();
    let lam = vs.iter().map(|v| math::dot(*v, *v)).sum::<f64>() / (6.0 * l0 * l0);
    (var, lam)
}

#[test]
fn distorted_octahedron_matches_brute_force() {
    let mut rng = common::rng(3);
    use rand::Rng;
    for _ in 0..20 {
        let mut s = regular_octahedron(2.0, [0.0; 3]);
        for p in s.positions.iter_mut().skip(1) {
            for x in p.iter_mut() {
                *x += rng.random_range(-0.25..0.25);
            }
        }
        let d = octahedral_distortion(&s, 0, &LIGANDS).unwrap();
        let vs: Vec<Vec3> = s.positions[1..].to_vec();
        let (var, lam) = brute_force(&vs);
        assert!(close(d.angle_variance, var, 1e-10), "{} vs {var}", d.angle_variance);
        assert!(close(d.quadratic_elongation, lam, 1e-10));
    }
}

#[test]
fn octahedron_uses_minimum_image() {
    let a = 2.0;
    let edge = 10.0;
    let base = regular_octahedron(a, [0.0; 3]);
    let pos: Vec<Vec3> = base.positions.iter().map(|p| p.map(|x| (x + edge) % edge)).collect();
    let cell = [[edge, 0.0, 0.0], [0.0, edge, 0.0], [0.0, 0.0, edge]];
    let s = Structure::new(cell, [true; 3], pos, base.species.clone()).unwrap();
    let d = octahedral_distortion(&s, 0, &LIGANDS).unwrap();
    assert!(close(d.quadratic_elongation, 1.0, 1e-12));
    assert!(d.off_center < 1e-12);
}

#[test]
fn octahedron_input_errors() {
    let s = regular_octahedron(2.0, [0.0; 3]);
    assert!(octahedral_distortion(&s, 0, &[1, 2, 3, 4, 5]).is_err());
    assert!(octahedral_distortion(&s, 0, &[1, 2, 3, 4, 5, 5]).is_err());
    assert!(octahedral_distortion(&s, 0, &[0, 2, 3, 4, 5, 6]).is_err());
    assert!(octahedral_distortion(&s, 0, &[1, 2, 3, 4, 5, 9]).is_err());
    let mut c = s.clone();
    c.positions[2] = c.positions[1];
    assert!(octahedral_distortion(&c, 0, &LIGANDS).is_err());
}

fn crystal() -> &'static Structure {
    static CELL: OnceLock<Structure> = OnceLock::new();
    CELL.get_or_init(|| PairOracle::default().zero_pressure_fcc(4, 18).unwrap())
}

#[test]
fn cauchy_relation_on_pair_crystal() {
    let r = elastic_constants(crystal(), &PairOracle::default(), 1e-3).unwrap();
    let c = r.tensor.c;
    assert!(r.max_force < 1e-10);
    assert!(r.reference_stress_gpa[..3].iter().all(|p| p.abs() < 1e-6));
    assert!(c[0][0] > c[0][1] && c[0][1] > 0.0);
    assert!(
        (c[0][1] - c[3][3]).abs() / c[3][3] < 0.02,
        "C12 {} C44 {}",
        c[0][1],
        c[3][3]
    );
    // cubic symmetry
    assert!(close(c[0][0], c[1][1], 1e-6 * c[0][0]));
    assert!(close(c[3][3], c[5][5], 1e-6 * c[3][3]));
    assert!(c[0][3].abs() < 1e-6 * c[0][0]);
}

#[test]
fn halving_strain_step_is_converged() {
    let a = elastic_constants(crystal(), &PairOracle::default(), 1e-3)
        .unwrap()
        .tensor;
    let b = elastic_constants(crystal(), &PairOracle::default(), 5e-4)
        .unwrap()
        .tensor;
    let scale = a.c.as_flattened().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(a.max_abs_diff(&b) / scale < 0.005);
}

#[test]
fn moduli_invariant_under_lattice_rotation() {
    let oracle = PairOracle::default();
    let base = voigt_moduli(&elastic_constants(crystal(), &oracle, 1e-3).unwrap().tensor).unwrap();
    let rot = math::rotation([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
    let turned = crystal().rotated(&rot);
    let m = voigt_moduli(&elastic_constants(&turned, &oracle, 1e-3).unwrap().tensor).unwrap();
    assert!((m.bulk_gpa - base.bulk_gpa).abs() / base.bulk_gpa < 0.01);
    assert!((m.shear_gpa - base.shear_gpa).abs() / base.shear_gpa < 0.01);
}

#[test]
fn free_atoms_have_zero_stiffness() {
    let r = elastic_constants(crystal(), &NullCalculator, 1e-3).unwrap();
    assert!(r.tensor.c.as_flattened().iter().all(|x| *x == 0.0));
}

#[test]
fn elastic_constants_preconditions() {
    let oracle = PairOracle::default();
    assert!(elastic_constants(crystal(), &oracle, 0.5).is_err());
    assert!(elastic_constants(crystal(), &oracle, 1e-5).is_err());
    let mut shaken = crystal().clone();
    shaken.positions[0][0] += 0.05;
    assert!(elastic_constants(&shaken, &oracle, 1e-3).is_err());
    let cluster = Structure::cluster(vec![[0.0; 3]], vec![18]).unwrap();
    assert!(elastic_constants(&cluster, &oracle, 1e-3).is_err());
    let small = structure::fcc(4.0, 1, 18).unwrap();
    assert!(elastic_constants(&small, &NullCalculator, 1e-3).is_ok());
}

proptest! {
    #[test]
    fn isotropic_identity(lambda in -50.0f64..200.0, mu in 0.1f64..150.0) {
        let (b, g) = bulk_shear(&VoigtTensor::isotropic(lambda, mu));
        prop_assert!((b - (lambda + 2.0 * mu / 3.0)).abs() < 1e-12 * (1.0 + lambda.abs() + mu));
        prop_assert!((g - mu).abs() < 1e-12 * (1.0 + lambda.abs() + mu));
    }

    #[test]
    fn kinetics_identity(lambda in 1e-7f64..1e-2, d in 1e-14f64..1e-6) {
        let k = diffusion_kinetics(lambda, d).unwrap();
        prop_assert!((k.tau_s * k.c_rate_per_h - 3600.0).abs() < 1e-9);
    }

    #[test]
    fn potential_gradient_antisymmetric(u1 in -10.0f64..10.0, u2 in -10.0f64..10.0, d in 0.1f64..20.0) {
        prop_assert_eq!(potential_gradient(u1, u2, d).unwrap(), -potential_gradient(u2, u1, d).unwrap());
    }

    #[test]
    fn reversal_negates_traction(w in prop::collection::vec(-1.0f64..1.0, 3..30), gaps in prop::collection::vec(0.05f64..1.0, 30)) {
        let mut l = vec![0.0];
        for g in gaps.iter().take(w.len() - 1) {
            l.push(l.last().unwrap() + g);
        }
        let p = SlidingProfile::new(l, w).unwrap();
        let t = sliding_traction(&p).unwrap();
        let r = sliding_traction(&p.reversed()).unwrap();
        let n = t.traction.len();
        for k in 0..n {
            prop_assert!((t.traction[k] + r.traction[n - 1 - k]).abs() < 1e-9 * (1.0 + t.traction[k].abs()));
        }
        prop_assert!((t.tau_max - r.tau_max).abs() < 1e-9 * (1.0 + t.tau_max));
    }

    #[test]
    fn traction_converges_at_second_order(a in 0.01f64..0.2, period in 1.0f64..5.0, phase in 0.0f64..std::f64::consts::TAU) {
        let err = |n: usize| {
            let l: Vec<f64> = (0..n).map(|k| period * k as f64 / (n - 1) as f64).collect();
            let w: Vec<f64> = l.iter().map(|x| a * (2.0 * std::f64::consts::PI * x / period + phase).sin()).collect();
            let t = sliding_traction(&SlidingProfile::new(l.clone(), w).unwrap()).unwrap();
            l.iter().zip(&t.traction).map(|(x, tr)| {
                let exact = -a * 2.0 * std::f64::consts::PI / period * (2.0 * std::f64::consts::PI * x / period + phase).cos();
                (tr - exact).abs()
            }).fold(0.0, f64::max)
        };
        let ratio = err(65) / err(129);
        prop_assert!(ratio > 3.5 && ratio < 4.5, "ratio {}", ratio);
    }
}
