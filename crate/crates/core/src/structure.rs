//! Atomic configurations, periodic geometry and spatial regions.

use crate::elements;
use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use serde::{Deserialize, Serialize};

/// Determinant below which a cell counts as singular (Å³).
const SINGULAR_VOLUME: f64 = 1e-10;

/// An atomic configuration: cell, positions, species and optional velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    /// Rows are lattice vectors (Å).
    pub cell: Mat3,
    pub periodic: [bool; 3],
    /// Cartesian positions (Å).
    pub positions: Vec<Vec3>,
    /// Atomic numbers.
    pub species: Vec<u8>,
    /// Atomic masses (amu).
    pub masses: Vec<f64>,
    /// Velocities (Å/fs).
    pub velocities: Option<Vec<Vec3>>,
    /// Net charge of the configuration (e).
    pub total_charge: f64,
}

impl Structure {
    /// Builds a validated structure with masses taken from the element table.
    pub fn new(cell: Mat3, periodic: [bool; 3], positions: Vec<Vec3>, species: Vec<u8>) -> Result<Self> {
        let masses = species
            .iter()
            .map(|&z| elements::mass(z).ok_or_else(|| Error::InvalidStructure(format!("unknown atomic number {z}"))))
            .collect::<Result<Vec<_>>>()?;
        let s = Structure {
            cell,
            periodic,
            positions,
            species,
            masses,
            velocities: None,
            total_charge: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Non-periodic structure with a zero cell.
    pub fn cluster(positions: Vec<Vec3>, species: Vec<u8>) -> Result<Self> {
        Self::new(math::ZERO33, [false; 3], positions, species)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::InvalidStructure("structure has no atoms".into()));
        }
        if self.species.len() != n || self.masses.len() != n {
            return Err(Error::InvalidStructure(format!(
                "length mismatch: {} positions, {} species, {} masses",
                n,
                self.species.len(),
                self.masses.len()
            )));
        }
        if let Some(v) = &self.velocities {
            if v.len() != n {
                return Err(Error::InvalidStructure(format!(
                    "{} velocities for {} atoms",
                    v.len(),
                    n
                )));
            }
        }
        if self.masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidStructure("masses must be positive".into()));
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidStructure("non-finite position".into()));
        }
        if self.is_periodic() && self.volume() <= SINGULAR_VOLUME {
            return Err(Error::InvalidStructure("periodic structure with singular cell".into()));
        }
        if !self.total_charge.is_finite() {
            return Err(Error::InvalidStructure("non-finite total charge".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic.iter().any(|&p| p)
    }

    /// Absolute cell volume (Å³); zero for a cluster without a cell.
    pub fn volume(&self) -> f64 {
        math::det(&self.cell).abs()
    }

    pub fn has_cell(&self) -> bool {
        self.volume() > SINGULAR_VOLUME
    }

    /// Minimum-image displacement helper for this structure.
    pub fn image(&self) -> MinimumImage {
        MinimumImage::new(self)
    }

    /// Minimum-image vector from atom `i` to atom `j`.
    pub fn displacement(&self, i: usize, j: usize) -> Vec3 {
        self.image().shortest(math::sub(self.positions[j], self.positions[i]))
    }

    pub fn add_atom(&mut self, z: u8, position: Vec3) -> Result<()> {
        let m = elements::mass(z).ok_or_else(|| Error::InvalidStructure(format!("unknown atomic number {z}")))?;
        self.positions.push(position);
        self.species.push(z);
        self.masses.push(m);
        if let Some(v) = &mut self.velocities {
            v.push(math::ZERO3);
        }
        Ok(())
    }

    /// Removes the given atoms; indices may be in any order.
    pub fn remove_atoms(&mut self, indices: &[usize]) {
        let mut drop = vec![false; self.len()];
        for &i in indices {
            drop[i] = true;
        }
        retain_unmasked(&mut self.positions, &drop);
        retain_unmasked(&mut self.species, &drop);
        retain_unmasked(&mut self.masses, &drop);
        if let Some(v) = &mut self.velocities {
            retain_unmasked(v, &drop);
        }
    }

    /// New structure with atoms reordered so that atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Structure {
        let mut s = self.clone();
        s.positions = perm.iter().map(|&i| self.positions[i]).collect();
        s.species = perm.iter().map(|&i| self.species[i]).collect();
        s.masses = perm.iter().map(|&i| self.masses[i]).collect();
        s.velocities = self.velocities.as_ref().map(|v| perm.iter().map(|&i| v[i]).collect());
        s
    }

    /// Rigidly rotates positions, cell and velocities by `rot` (acting on column vectors).
    pub fn rotated(&self, rot: &Mat3) -> Structure {
        let mut s = self.clone();
        for p in s.positions.iter_mut() {
            *p = math::mat_vec(rot, *p);
        }
        for row in s.cell.iter_mut() {
            *row = math::mat_vec(rot, *row);
        }
        if let Some(v) = &mut s.velocities {
            for x in v.iter_mut() {
                *x = math::mat_vec(rot, *x);
            }
        }
        s
    }

    pub fn translated(&self, shift: Vec3) -> Structure {
        let mut s = self.clone();
        for p in s.positions.iter_mut() {
            *p = math::add(*p, shift);
        }
        s
    }
}

fn retain_unmasked<T>(v: &mut Vec<T>, drop: &[bool]) {
    let mut k = 0;
    v.retain(|_| {
        k += 1;
        !drop[k - 1]
    });
}

/// Applies a homogeneous strain: `cell' = cell·(I + ε)` with positions mapped
/// affinely so fractional coordinates are preserved. `eps` is symmetrized first.
pub fn apply_strain(s: &Structure, eps: &Mat3) -> Result<Structure> {
    let sym = math::symmetrize(eps);
    let mut deform = math::IDENTITY;
    math::mat_add_assign(&mut deform, &sym);
    if math::det(&deform).abs() < 1e-12 {
        return Err(Error::Geometry("strain produces a singular cell".into()));
    }
    let mut out = s.clone();
    out.cell = math::matmul(&s.cell, &deform);
    for p in out.positions.iter_mut() {
        *p = math::vec_mat(*p, &deform);
    }
    if s.has_cell() && !out.has_cell() {
        return Err(Error::Geometry("strain produces a singular cell".into()));
    }
    Ok(out)
}

/// Face-centred cubic crystal of `reps³` conventional cells with lattice
/// constant `a`.
pub fn fcc(a: f64, reps: usize, z: u8) -> Result<Structure> {
    if !(a > 0.0) || reps == 0 {
        return Err(Error::Config("fcc needs a > 0 and at least one cell".into()));
    }
    let basis = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
    let cell = [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]];
    let unit = Structure::new(
        cell,
        [true; 3],
        basis.iter().map(|b| math::scale(*b, a)).collect(),
        vec![z; 4],
    )?;
    replicate(&unit, reps, reps, reps)
}

/// Tiles a fully periodic structure `nx × ny × nz` times.
pub fn replicate(s: &Structure, nx: usize, ny: usize, nz: usize) -> Result<Structure> {
    if !s.periodic.iter().all(|&p| p) {
        return Err(Error::Geometry("replicate requires a fully periodic structure".into()));
    }
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Geometry("replication counts must be positive".into()));
    }
    let copies = nx * ny * nz;
    let n = s.len();
    let mut out = s.clone();
    out.positions = Vec::with_capacity(n * copies);
    out.species = Vec::with_capacity(n * copies);
    out.masses = Vec::with_capacity(n * copies);
    let mut vel = s.velocities.as_ref().map(|_| Vec::with_capacity(n * copies));
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let shift = math::vec_mat([ix as f64, iy as f64, iz as f64], &s.cell);
                for i in 0..n {
                    out.positions.push(math::add(s.positions[i], shift));
                    out.species.push(s.species[i]);
                    out.masses.push(s.masses[i]);
                    if let (Some(v), Some(src)) = (&mut vel, &s.velocities) {
                        v.push(src[i]);
                    }
                }
            }
        }
    }
    out.velocities = vel;
    out.cell[0] = math::scale(s.cell[0], nx as f64);
    out.cell[1] = math::scale(s.cell[1], ny as f64);
    out.cell[2] = math::scale(s.cell[2], nz as f64);
    out.total_charge = s.total_charge * copies as f64;
    Ok(out)
}

/// Minimum-image reduction of displacement vectors.
#[derive(Debug, Clone)]
pub struct MinimumImage {
    cell: Mat3,
    inverse: Option<Mat3>,
    periodic: [bool; 3],
}

impl MinimumImage {
    pub fn new(s: &Structure) -> Self {
        let inverse = if s.has_cell() { math::inverse(&s.cell) } else { None };
        MinimumImage {
            cell: s.cell,
            inverse,
            periodic: s.periodic,
        }
    }

    pub fn fractional(&self, r: Vec3) -> Option<Vec3> {
        self.inverse.as_ref().map(|inv| math::vec_mat(r, inv))
    }

    /// Shortest periodic image of `d`. Among images reachable by rounding the
    /// fractional coordinates and one further lattice step, the shortest wins.
    pub fn shortest(&self, d: Vec3) -> Vec3 {
        let Some(frac) = self.fractional(d) else {
            return d;
        };
        if !self.periodic.iter().any(|&p| p) {
            return d;
        }
        let mut f = frac;
        for k in 0..3 {
            if self.periodic[k] {
                f[k] -= f[k].round();
            }
        }
        let base = math::vec_mat(f, &self.cell);
        let range = |k: usize| if self.periodic[k] { -1..=1 } else { 0..=0 };
        let mut best = base;
        let mut best_d2 = math::dot(base, base);
        for a in range(0) {
            for b in range(1) {
                for c in range(2) {
                    if a == 0 && b == 0 && c == 0 {
                        continue;
                    }
                    let shift = math::vec_mat([a as f64, b as f64, c as f64], &self.cell);
                    let cand = math::add(base, shift);
                    let d2 = math::dot(cand, cand);
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = cand;
                    }
                }
            }
        }
        best
    }
}

/// Axis-aligned slab `min ≤ x_axis < max` with an optional species filter.
///
/// The coordinate along `axis` is taken after wrapping the atom into the cell
/// along the lattice direction most aligned with that axis (when periodic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub axis: usize,
    pub min: f64,
    pub max: f64,
    pub species: Option<u8>,
    /// Explicit region volume (Å³); required for structures without a cell.
    pub volume: Option<f64>,
}

impl Region {
    pub fn slab(axis: usize, min: f64, max: f64) -> Result<Self> {
        let r = Region {
            axis,
            min,
            max,
            species: None,
            volume: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_species(mut self, z: u8) -> Self {
        self.species = Some(z);
        self
    }

    pub fn with_volume(mut self, volume: f64) -> Self {
        self.volume = Some(volume);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis > 2 {
            return Err(Error::Config(format!("region axis {} out of range", self.axis)));
        }
        if !(self.min < self.max) {
            return Err(Error::Config(format!(
                "region requires min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if let Some(v) = self.volume {
            if !(v > 0.0) {
                return Err(Error::Config("region volume must be positive".into()));
            }
        }
        Ok(())
    }

    /// Lattice direction whose face normal is most aligned with the slab axis.
    fn lattice_direction(&self, s: &Structure) -> usize {
        let mut best = 0;
        let mut best_cos = -1.0;
        for k in 0..3 {
            let n = math::cross(s.cell[(k + 1) % 3], s.cell[(k + 2) % 3]);
            let len = math::norm(n);
            if len == 0.0 {
                continue;
            }
            let c = (n[self.axis] / len).abs();
            if c > best_cos {
                best_cos = c;
                best = k;
            }
        }
        best
    }

    /// Coordinate of atom `i` along the slab axis, wrapped into the cell.
    pub fn axis_coordinate(&self, s: &Structure, i: usize) -> f64 {
        let p = s.positions[i];
        if !s.has_cell() {
            return p[self.axis];
        }
        let k = self.lattice_direction(s);
        if !s.periodic[k] {
            return p[self.axis];
        }
        let frac = s.image().fractional(p).expect("cell checked nonsingular");
        p[self.axis] - frac[k].floor() * s.cell[k][self.axis]
    }

    pub fn contains(&self, s: &Structure, i: usize) -> bool {
        if let Some(z) = self.species {
            if s.species[i] != z {
                return false;
            }
        }
        let x = self.axis_coordinate(s, i);
        x >= self.min && x < self.max
    }

    pub fn atoms(&self, s: &Structure) -> Vec<usize> {
        (0..s.len()).filter(|&i| self.contains(s, i)).collect()
    }

    /// Region volume: explicit override, else the slab's share of the cell.
    pub fn volume_in(&self, s: &Structure) -> Result<f64> {
        if let Some(v) = self.volume {
            return Ok(v);
        }
        if !s.has_cell() {
            return Err(Error::Geometry(
                "region volume needs a cell or an explicit volume".into(),
            ));
        }
        let k = self.lattice_direction(s);
        let width = math::perpendicular_widths(&s.cell)[k];
        Ok(s.volume() * (self.max - self.min) / width)
    }

    /// Distance from the coordinate of atom `i` to the nearer slab face.
    pub fn distance_to_boundary(&self, s: &Structure, i: usize) -> f64 {
        let x = self.axis_coordinate(s, i);
        (x - self.min).abs().min((x - self.max).abs())
    }
}
