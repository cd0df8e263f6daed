//! Charge/discharge protocol: insert intercalants near a host, drive them in
//! with a small external force, relax; extract them in reverse.
//!
//! Works with any [`Calculator`]. Host atoms are all atoms whose species
//! differs from the intercalant species.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculator::{Calculator, Evaluation};
use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::structure::{Region, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub max_steps: usize,
    /// Convergence threshold on max |F| (eV/Å).
    pub tol: f64,
    /// Largest single-atom displacement per step (Å).
    pub step_cap: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig {
            max_steps: 500,
            tol: 0.01,
            step_cap: 0.2,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.step_cap > 0.0) || !self.tol.is_finite() || !self.step_cap.is_finite() {
            return Err(Error::Config("relaxation needs positive tolerance and step cap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxOutcome {
    pub structure: Structure,
    /// Calculator energy of the final structure (eV), without bias work.
    pub energy: f64,
    /// Max |F + b| at the final structure (eV/Å).
    pub max_force: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub converged: bool,
    /// Biased energy `E − Σ b·R` at the start and after every accepted step.
    pub history: Vec<f64>,
}

const INITIAL_STEP: f64 = 0.05;
const GROW: f64 = 1.2;
const SHRINK: f64 = 0.5;

fn total_force(ev: &Evaluation, bias: &[(usize, Vec3)]) -> Vec<Vec3> {
    let mut f = ev.forces.clone();
    for &(i, b) in bias {
        math::add_assign(&mut f[i], b);
    }
    f
}

fn biased_energy(ev: &Evaluation, s: &Structure, bias: &[(usize, Vec3)]) -> f64 {
    ev.energy - bias.iter().map(|&(i, b)| math::dot(b, s.positions[i])).sum::<f64>()
}

fn max_norm(f: &[Vec3]) -> f64 {
    f.iter().map(|v| math::norm(*v)).fold(0.0, f64::max)
}

fn checked<C: Calculator + ?Sized>(calc: &C, s: &Structure) -> Result<Evaluation> {
    let ev = calc.evaluate(s)?;
    ev.check_finite()?;
    Ok(ev)
}

/// Steepest descent on `E − Σ b·R` with an adaptive step: ×1.2 after an
/// accepted step, ×0.5 after a rejected one or when the new force opposes
/// the last displacement.
pub fn relax<C: Calculator + ?Sized>(
    s: &Structure,
    calc: &C,
    cfg: &RelaxConfig,
    bias: &[(usize, Vec3)],
) -> Result<RelaxOutcome> {
    cfg.validate()?;
    if bias
        .iter()
        .any(|&(i, b)| i >= s.len() || b.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Config("bias refers to a missing atom or is not finite".into()));
    }
    let mut cur = s.clone();
    let mut ev = checked(calc, &cur)?;
    let mut force = total_force(&ev, bias);
    let mut energy = biased_energy(&ev, &cur, bias);
    let mut history = vec![energy];
    let (mut accepted, mut rejected) = (0, 0);
    let mut alpha = INITIAL_STEP;

    for _ in 0..cfg.max_steps {
        let fmax = max_norm(&force);
        if fmax <= cfg.tol {
            break;
        }
        let a = alpha.min(cfg.step_cap / fmax);
        let step: Vec<Vec3> = force.iter().map(|f| math::scale(*f, a)).collect();
        let mut trial = cur.clone();
        for (p, d) in trial.positions.iter_mut().zip(&step) {
            math::add_assign(p, *d);
        }
        let tev = checked(calc, &trial)?;
        let te = biased_energy(&tev, &trial, bias);
        if te <= energy {
            let tf = total_force(&tev, bias);
            let power: f64 = tf.iter().zip(&step).map(|(f, d)| math::dot(*f, *d)).sum();
            alpha = if power < 0.0 { a * SHRINK } else { a * GROW };
            cur = trial;
            ev = tev;
            force = tf;
            energy = te;
            history.push(energy);
            accepted += 1;
        } else {
            alpha = a * SHRINK;
            rejected += 1;
            if alpha * fmax < 1e-14 {
                break;
            }
        }
    }
    let max_force = max_norm(&force);
    Ok(RelaxOutcome {
        energy: ev.energy,
        structure: cur,
        max_force,
        accepted,
        rejected,
        converged: max_force <= cfg.tol,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Charge,
    Discharge,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Charge => "charge",
            Mode::Discharge => "discharge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Atomic number of the intercalant.
    pub species: u8,
    /// Insertion region; extraction ranks intercalants by distance to its faces.
    pub region: Region,
    /// Region whose stress is traced; defaults to the host slab of the
    /// initial structure.
    pub stress_region: Option<Region>,
    pub atoms_per_step: usize,
    /// Magnitude of the driving force on fresh intercalants (eV/Å).
    pub bias: f64,
    /// Charging direction; `None` points along the region axis toward the
    /// host centroid. Discharge uses the opposite direction.
    pub bias_direction: Option<Vec3>,
    pub relax: RelaxConfig,
    /// Stop charging at this many intercalants per host atom.
    pub x_max: f64,
    /// Exclusion radius for new atoms (Å).
    pub min_separation: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl CycleConfig {
    pub fn new(species: u8, region: Region) -> Self {
        CycleConfig {
            species,
            region,
            stress_region: None,
            atoms_per_step: 1,
            bias: 0.1,
            bias_direction: None,
            relax: RelaxConfig::default(),
            x_max: 1.0,
            min_separation: 1.5,
            max_attempts: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if let Some(r) = &self.stress_region {
            r.validate()?;
        }
        self.relax.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.atoms_per_step < 1 {
            return bad("atoms per step must be at least 1");
        }
        if !(self.bias >= 0.0) || !self.bias.is_finite() {
            return bad("bias magnitude must be non-negative");
        }
        if let Some(d) = self.bias_direction {
            if !(math::norm(d) > 0.0) || d.iter().any(|x| !x.is_finite()) {
                return bad("bias direction must be a nonzero vector");
            }
        }
        if !(self.x_max > 0.0) {
            return bad("x_max must be positive");
        }
        if !(self.min_separation >= 0.0) || self.max_attempts == 0 {
            return bad("placement needs a non-negative exclusion radius and at least one attempt");
        }
        if crate::elements::symbol(self.species).is_none() {
            return bad("unknown intercalant species");
        }
        Ok(())
    }

    /// Traced region for initial structure `s`: the configured one, else the
    /// slab spanned by the host atoms along the region axis, padded by 0.5 Å.
    pub fn stress_region(&self, s: &Structure) -> Result<Region> {
        if let Some(r) = &self.stress_region {
            return Ok(r.clone());
        }
        let host = host_atoms(s, self.species);
        if host.is_empty() {
            return Err(Error::Data("structure has no host atoms".into()));
        }
        let axis = self.region.axis;
        let (lo, hi) = host
            .iter()
            .map(|&i| self.region.axis_coordinate(s, i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        Region::slab(axis, lo - 0.5, hi + 0.5)
    }

    /// Unit charging direction for structure `s`.
    pub fn charge_direction(&self, s: &Structure) -> Vec3 {
        if let Some(d) = self.bias_direction {
            return math::scale(d, 1.0 / math::norm(d));
        }
        let host = host_atoms(s, self.species);
        let mut e = math::ZERO3;
        if host.is_empty() {
            return e;
        }
        let c = host.iter().map(|&i| self.region.axis_coordinate(s, i)).sum::<f64>() / host.len() as f64;
        let mid = 0.5 * (self.region.min + self.region.max);
        e[self.region.axis] = if c >= mid { 1.0 } else { -1.0 };
        e
    }
}

pub fn host_atoms(s: &Structure, species: u8) -> Vec<usize> {
    (0..s.len()).filter(|&i| s.species[i] != species).collect()
}

pub fn intercalants(s: &Structure, species: u8) -> Vec<usize> {
    (0..s.len()).filter(|&i| s.species[i] == species).collect()
}

/// Intercalants per host atom.
pub fn content(s: &Structure, species: u8) -> f64 {
    let host = host_atoms(s, species).len();
    if host == 0 {
        return 0.0;
    }
    intercalants(s, species).len() as f64 / host as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub structure: Structure,
    /// Indices of inserted atoms in `structure` (charge), or removed atoms
    /// in the input (discharge).
    pub atoms: Vec<usize>,
    /// Removed atoms that had left the region before deletion.
    pub left_region: usize,
    pub relaxations: Vec<RelaxOutcome>,
}

/// Uniform rejection sampling over the cell, restricted to the region and
/// to points at least `min_separation` from every atom.
pub fn place_atoms(s: &Structure, cfg: &CycleConfig, rng: &mut ChaCha8Rng) -> Result<(Structure, Vec<usize>)> {
    if !s.has_cell() {
        return Err(Error::Geometry("insertion needs a cell to sample from".into()));
    }
    let mut out = s.clone();
    let mut placed = Vec::with_capacity(cfg.atoms_per_step);
    let mut attempts = 0;
    while placed.len() < cfg.atoms_per_step {
        if attempts == cfg.max_attempts {
            return Err(Error::Data(format!(
                "could not place intercalant after {} attempts; region too crowded",
                cfg.max_attempts
            )));
        }
        attempts += 1;
        let f: Vec3 = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let p = math::vec_mat(f, &out.cell);
        out.add_atom(cfg.species, p)?;
        let new = out.len() - 1;
        let image = out.image();
        let clear = (0..new).all(|j| math::norm(image.shortest(math::sub(out.positions[j], p))) >= cfg.min_separation);
        if clear && cfg.region.contains(&out, new) {
            placed.push(new);
        } else {
            out.remove_atoms(&[new]);
        }
    }
    Ok((out, placed))
}

/// Insert, drive in under the bias, then relax without it.
pub fn charge_step<C: Calculator + ?Sized>(
    s: &Structure,
    calc: &C,
    cfg: &CycleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    cfg.validate()?;
    let dir = cfg.charge_direction(s);
    let (inserted, placed) = place_atoms(s, cfg, rng)?;
    let b = math::scale(dir, cfg.bias);
    let bias: Vec<(usize, Vec3)> = placed.iter().map(|&i| (i, b)).collect();
    let driven = relax(&inserted, calc, &cfg.relax, &bias)?;
    let settled = relax(&driven.structure, calc, &cfg.relax, &[])?;
    Ok(StepReport {
        structure: settled.structure.clone(),
        atoms: placed,
        left_region: 0,
        relaxations: vec![driven, settled],
    })
}

/// Intercalants ordered by distance to the region faces, ties by index.
pub fn extraction_order(s: &Structure, cfg: &CycleConfig) -> Vec<usize> {
    let mut idx = intercalants(s, cfg.species);
    let d: Vec<f64> = (0..s.len()).map(|i| cfg.region.distance_to_boundary(s, i)).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx
}

/// Pull the intercalants nearest the region faces out with the reversed
/// bias, delete them, relax.
pub fn discharge_step<C: Calculator + ?Sized>(s: &Structure, calc: &C, cfg: &CycleConfig) -> Result<StepReport> {
    cfg.validate()?;
    let order = extraction_order(s, cfg);
    if order.is_empty() {
        return Err(Error::Data("no intercalants to extract".into()));
    }
    if order.len() < cfg.atoms_per_step {
        return Err(Error::Data(format!(
            "{} intercalants present, {} requested",
            order.len(),
            cfg.atoms_per_step
        )));
    }
    let mut chosen = order[..cfg.atoms_per_step].to_vec();
    chosen.sort_unstable();
    let b = math::scale(cfg.charge_direction(s), -cfg.bias);
    let bias: Vec<(usize, Vec3)> = chosen.iter().map(|&i| (i, b)).collect();
    let pulled = relax(s, calc, &cfg.relax, &bias)?;
    let left_region = chosen
        .iter()
        .filter(|&&i| !cfg.region.contains(&pulled.structure, i))
        .count();
    let mut removed = pulled.structure.clone();
    removed.remove_atoms(&chosen);
    let settled = relax(&removed, calc, &cfg.relax, &[])?;
    Ok(StepReport {
        structure: settled.structure.clone(),
        atoms: chosen,
        left_region,
        relaxations: vec![pulled, settled],
    })
}

/// Σ_i∈region W_i / V_region (eV/Å³).
pub fn region_stress_from(ev: &Evaluation, s: &Structure, region: &Region) -> Result<Mat3> {
    let atoms = region.atoms(s);
    if atoms.is_empty() {
        return Err(Error::Data("stress region contains no atoms".into()));
    }
    let mut w = math::ZERO33;
    for &i in &atoms {
        math::mat_add_assign(&mut w, &ev.atom_virials[i]);
    }
    Ok(math::mat_scale(&w, 1.0 / region.volume_in(s)?))
}

pub fn region_stress<C: Calculator + ?Sized>(s: &Structure, calc: &C, region: &Region) -> Result<Mat3> {
    region.validate()?;
    let ev = checked(calc, s)?;
    region_stress_from(&ev, s, region)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub mode: Mode,
    pub steps: usize,
}

/// Parses `charge:3,discharge:2` style schedules.
pub fn parse_schedule(text: &str) -> Result<Vec<ScheduleEntry>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (mode, n) = part.split_once(':').unwrap_or((part, "1"));
        let mode = match mode.trim() {
            "charge" | "c" => Mode::Charge,
            "discharge" | "d" => Mode::Discharge,
            m => return Err(Error::Config(format!("unknown schedule mode '{m}'"))),
        };
        let steps = n
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad step count in '{part}'")))?;
        out.push(ScheduleEntry { mode, steps });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub mode: Mode,
    pub x: f64,
    pub e_total: f64,
    pub stress: Mat3,
    pub region_stress: Mat3,
    pub fmax: f64,
}

pub const TRACE_HEADER: &str = "step,mode,x,e_total_ev,sxx,syy,szz,syz,sxz,sxy,rxx,ryy,rzz,ryz,rxz,rxy,fmax";

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},{}", self.step, self.mode.as_str(), self.x, self.e_total);
        for m in [&self.stress, &self.region_stress] {
            for (a, b) in [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)] {
                let _ = write!(row, ",{}", m[a][b]);
            }
        }
        let _ = write!(row, ",{}", self.fmax);
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleStop {
    Completed,
    /// The next charge step would exceed `x_max`.
    ContentLimit {
        step: usize,
        x: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CyclingTrace {
    pub records: Vec<TraceRecord>,
    pub stop: CycleStop,
    /// Bias magnitude and charging direction actually used.
    pub bias: f64,
    pub bias_direction: Vec3,
    /// Region behind the `r**` columns.
    pub stress_region: Region,
    pub calculator: String,
    pub seed: u64,
}

impl CyclingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRun {
    pub trace: CyclingTrace,
    /// Structure after each recorded step.
    pub frames: Vec<Structure>,
}

impl CycleRun {
    pub fn final_structure(&self) -> Option<&Structure> {
        self.frames.last()
    }
}

/// Measures one trace row for structure `s`.
pub fn record<C: Calculator + ?Sized>(
    s: &Structure,
    calc: &C,
    cfg: &CycleConfig,
    region: &Region,
    step: usize,
    mode: Mode,
) -> Result<TraceRecord> {
    let ev = checked(calc, s)?;
    Ok(TraceRecord {
        step,
        mode,
        x: content(s, cfg.species),
        e_total: ev.energy,
        stress: ev.stress(s.volume())?,
        region_stress: region_stress_from(&ev, s, region)?,
        fmax: ev.max_force(),
    })
}

pub fn run_cycle<C: Calculator + ?Sized>(
    s: &Structure,
    calc: &C,
    cfg: &CycleConfig,
    schedule: &[ScheduleEntry],
) -> Result<CycleRun> {
    run_cycle_with(s, calc, cfg, schedule, |_, _| Ok(()))
}

/// Like [`run_cycle`], calling `sink` after every step so callers can stream
/// the trace.
pub fn run_cycle_with<C, F>(
    s: &Structure,
    calc: &C,
    cfg: &CycleConfig,
    schedule: &[ScheduleEntry],
    mut sink: F,
) -> Result<CycleRun>
where
    C: Calculator + ?Sized,
    F: FnMut(&TraceRecord, &Structure) -> Result<()>,
{
    cfg.validate()?;
    if schedule.is_empty() || schedule.iter().all(|e| e.steps == 0) {
        return Err(Error::Config("cycling schedule is empty".into()));
    }
    if !s.has_cell() {
        return Err(Error::Geometry("cycling needs a cell for stresses".into()));
    }
    let n_host = host_atoms(s, cfg.species).len();
    if n_host == 0 {
        return Err(Error::Data("structure has no host atoms".into()));
    }
    let region = cfg.stress_region(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cur = s.clone();
    let mut trace = CyclingTrace {
        records: Vec::new(),
        stop: CycleStop::Completed,
        bias: cfg.bias,
        bias_direction: cfg.charge_direction(s),
        stress_region: region.clone(),
        calculator: calc.name(),
        seed: cfg.seed,
    };
    let mut frames = Vec::new();
    let mut step = 0;
    'outer: for entry in schedule {
        for _ in 0..entry.steps {
            let report = match entry.mode {
                Mode::Charge => {
                    let next = (intercalants(&cur, cfg.species).len() + cfg.atoms_per_step) as f64 / n_host as f64;
                    if next > cfg.x_max * (1.0 + 1e-12) {
                        trace.stop = CycleStop::ContentLimit {
                            step,
                            x: content(&cur, cfg.species),
                        };
                        break 'outer;
                    }
                    charge_step(&cur, calc, cfg, &mut rng)?
                }
                Mode::Discharge => discharge_step(&cur, calc, cfg)?,
            };
            step += 1;
            cur = report.structure;
            let rec = record(&cur, calc, cfg, &region, step, entry.mode)?;
            sink(&rec, &cur)?;
            trace.records.push(rec);
            frames.push(cur.clone());
        }
    }
    Ok(CycleRun { trace, frames })
}
