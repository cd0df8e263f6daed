//! Cell-list neighbor search under the minimum-image convention.

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::structure::Structure;

/// Default descriptor cutoff radius (Å).
pub const DEFAULT_CUTOFF: f64 = 8.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Minimum-image vector from the central atom to the neighbor (Å).
    pub vector: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub cutoff: f64,
    /// Per-atom neighbors, sorted by neighbor index.
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl NeighborList {
    pub fn of(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn pair_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Checks that every periodic direction is at least `2·cutoff` wide.
pub fn check_minimum_image(s: &Structure, cutoff: f64) -> Result<()> {
    if !s.is_periodic() {
        return Ok(());
    }
    let widths = math::perpendicular_widths(&s.cell);
    for k in 0..3 {
        if s.periodic[k] && widths[k] < 2.0 * cutoff {
            return Err(Error::Geometry(format!(
                "cell width {:.4} Å along lattice vector {} is below twice the cutoff ({:.4} Å)",
                widths[k],
                k,
                2.0 * cutoff
            )));
        }
    }
    Ok(())
}

pub fn build_neighbor_list(s: &Structure, cutoff: f64) -> Result<NeighborList> {
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return Err(Error::Config(format!("cutoff must be positive, got {cutoff}")));
    }
    check_minimum_image(s, cutoff)?;
    let n = s.len();
    let image = s.image();
    let use_cell = s.has_cell();
    let widths = if use_cell {
        math::perpendicular_widths(&s.cell)
    } else {
        [1.0; 3]
    };

    // binning coordinates: fractional when a cell exists, Cartesian otherwise
    let coords: Vec<Vec3> = s
        .positions
        .iter()
        .map(|&p| if use_cell { image.fractional(p).unwrap() } else { p })
        .collect();
    let max_bins = (4 * n).max(27);
    let mut nbins = [1usize; 3];
    let mut lo = [0.0; 3];
    let mut span = [1.0; 3];
    for k in 0..3 {
        if s.periodic[k] {
            nbins[k] = ((widths[k] / cutoff).floor() as usize).max(1);
        } else {
            let (mn, mx) = coords.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                (a.min(c[k]), b.max(c[k]))
            });
            lo[k] = mn;
            span[k] = (mx - mn).max(f64::MIN_POSITIVE);
            nbins[k] = (((mx - mn) * widths[k] / cutoff).floor() as usize).max(1);
        }
        nbins[k] = nbins[k].min(max_bins);
    }
    while nbins.iter().product::<usize>() > max_bins {
        let k = (0..3).max_by_key(|&k| nbins[k]).unwrap();
        nbins[k] = (nbins[k] / 2).max(1);
    }

    let bin_of = |c: &Vec3| -> [usize; 3] {
        let mut b = [0usize; 3];
        for k in 0..3 {
            let u = if s.periodic[k] {
                c[k] - c[k].floor()
            } else {
                (c[k] - lo[k]) / span[k]
            };
            b[k] = ((u * nbins[k] as f64).floor().max(0.0) as usize).min(nbins[k] - 1);
        }
        b
    };
    let flat = |b: [usize; 3]| (b[0] * nbins[1] + b[1]) * nbins[2] + b[2];
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); nbins.iter().product()];
    let atom_bins: Vec<[usize; 3]> = coords.iter().map(bin_of).collect();
    for (i, b) in atom_bins.iter().enumerate() {
        bins[flat(*b)].push(i);
    }

    let mut neighbors = vec![Vec::new(); n];
    let mut visit = Vec::with_capacity(27);
    for i in 0..n {
        visit.clear();
        let b = atom_bins[i];
        for da in -1i64..=1 {
            for db in -1i64..=1 {
                for dc in -1i64..=1 {
                    let mut nb = [0usize; 3];
                    let mut ok = true;
                    for (k, d) in [da, db, dc].into_iter().enumerate() {
                        let m = nbins[k] as i64;
                        let v = b[k] as i64 + d;
                        if s.periodic[k] {
                            nb[k] = v.rem_euclid(m) as usize;
                        } else if v < 0 || v >= m {
                            ok = false;
                        } else {
                            nb[k] = v as usize;
                        }
                    }
                    if ok {
                        visit.push(flat(nb));
                    }
                }
            }
        }
        visit.sort_unstable();
        visit.dedup();
        let list = &mut neighbors[i];
        for &bin in &visit {
            for &j in &bins[bin] {
                if j == i {
                    continue;
                }
                let v = image.shortest(math::sub(s.positions[j], s.positions[i]));
                let r = math::norm(v);
                if r == 0.0 {
                    return Err(Error::Geometry(format!("atoms {i} and {j} coincide")));
                }
                if r <= cutoff {
                    list.push(Neighbor {
                        index: j,
                        vector: v,
                        distance: r,
                    });
                }
            }
        }
        list.sort_by_key(|nb| nb.index);
    }
    Ok(NeighborList { cutoff, neighbors })
}
