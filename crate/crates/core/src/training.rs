//! Fitting the energy and electronegativity networks to reference data.
//!
//! The loss is
//! `L = w_E·mean((E−E_ref)/N)² + w_F·mean(F−F_ref)² + w_Q·mean(Q−Q_ref)²`.
//! Its gradient is taken through the full prediction, including the charge
//! equilibration and the force expression, which is itself a gradient; the
//! network backward pass therefore carries a tangent (see
//! [`Mlp::backward`](crate::network::Mlp::backward)).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptors::{self, AcsfParams};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::oracle::PairOracle;
use crate::potential::{self, ChargeMode, ModelSpec, PotentialModel, Prepared, Standardization};
use crate::structure::Structure;
use crate::xyz::{self, Frame};
use crate::Calculator;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub structure: Structure,
    /// Reference total energy (eV).
    pub energy: f64,
    /// Reference forces (eV/Å).
    pub forces: Option<Vec<Vec3>>,
    /// Reference charges (e).
    pub charges: Option<Vec<f64>>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let n = self.structure.len();
        if !self.energy.is_finite() {
            return Err(Error::Data("non-finite reference energy".into()));
        }
        if let Some(f) = &self.forces {
            if f.len() != n || f.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("reference forces must be finite with {n} rows")));
            }
        }
        if let Some(q) = &self.charges {
            if q.len() != n || q.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "reference charges must be finite with {n} entries"
                )));
            }
        }
        Ok(())
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            structure: self.structure.clone(),
            energy: Some(self.energy),
            forces: self.forces.clone(),
            charges: self.charges.clone(),
        }
    }
}

/// Converts parsed frames; every frame must carry an energy.
pub fn samples_from_frames(frames: Vec<Frame>) -> Result<Vec<Sample>> {
    frames
        .into_iter()
        .enumerate()
        .map(|(k, f)| {
            let energy = f
                .energy
                .ok_or_else(|| Error::Data(format!("frame {k} has no energy")))?;
            let s = Sample {
                structure: f.structure,
                energy,
                forces: f.forces,
                charges: f.charges,
            };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    samples_from_frames(xyz::read_frames(path)?)
}

pub fn write_dataset(samples: &[Sample]) -> String {
    let frames: Vec<Frame> = samples.iter().map(Sample::to_frame).collect();
    xyz::write_frames(&frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the per-atom energy term (1/eV²·atom²).
    pub w_e: f64,
    /// Weight of the force term (Å²/eV²).
    pub w_f: f64,
    /// Weight of the charge term (1/e²).
    pub w_q: f64,
    pub lr: f64,
    pub momentum: f64,
    /// Step-size factor applied after an epoch that lowered the loss,
    /// capped at `lr`.
    pub lr_growth: f64,
    pub epochs: usize,
    /// Epochs of the charge-only phase (electronegativity head alone).
    pub charge_epochs: usize,
    /// Samples per minibatch; 0 means the whole training split.
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            w_e: 1.0,
            w_f: 0.1,
            w_q: 1.0,
            lr: 1.0,
            momentum: 0.95,
            lr_growth: 1.05,
            epochs: 2000,
            charge_epochs: 200,
            batch_size: 0,
            val_fraction: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_e, self.w_f, self.w_q];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative and not all zero".into(),
            ));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_growth >= 1.0) || !self.lr_growth.is_finite() {
            return Err(Error::Config("step growth factor must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn charge_phase(&self) -> Self {
        TrainConfig {
            w_e: 0.0,
            w_f: 0.0,
            ..self.clone()
        }
    }
}

/// Flattened trainable parameters: energy network, then electronegativity
/// network.
pub fn model_params(m: &PotentialModel) -> Vec<f64> {
    let mut p = m.energy_net.params();
    p.extend(m.chi_net.params());
    p
}

pub fn set_model_params(m: &mut PotentialModel, p: &[f64]) {
    let ne = m.energy_net.n_params();
    m.energy_net.set_params(&p[..ne]);
    m.chi_net.set_params(&p[ne..]);
}

/// Predictions of one sample used by losses and metrics.
#[derive(Debug, Clone, PartialEq)]
struct SampleEval {
    energy: f64,
    forces: Option<Vec<Vec3>>,
    charges: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    energies: usize,
    force_components: usize,
    charges: usize,
}

impl Counts {
    fn of<'a>(samples: impl Iterator<Item = &'a Sample>, use_charges: bool) -> Self {
        let mut c = Counts::default();
        for s in samples {
            c.energies += 1;
            if s.forces.is_some() {
                c.force_components += 3 * s.structure.len();
            }
            if use_charges && s.charges.is_some() {
                c.charges += s.structure.len();
            }
        }
        c
    }
}

fn evaluate_one(m: &PotentialModel, sample: &Sample, prep: &Prepared, need_forces: bool) -> Result<SampleEval> {
    let st = potential::forward_state(m, prep, &ChargeMode::Equilibrate)?;
    let energy = st.atom_energies.iter().sum::<f64>() + st.elec_energy;
    let forces = if need_forces && sample.forces.is_some() {
        let der = potential::derivatives(m, &sample.structure, prep, &st);
        Some(
            der.short_grad
                .iter()
                .zip(&der.elec_grad)
                .map(|(a, b)| math::scale(math::add(*a, *b), -1.0))
                .collect(),
        )
    } else {
        None
    };
    Ok(SampleEval {
        energy,
        forces,
        charges: st.charges,
    })
}

/// Loss value and, when `grad` is given, its gradient for one sample.
fn sample_loss(
    m: &PotentialModel,
    sample: &Sample,
    prep: &Prepared,
    cfg: &TrainConfig,
    counts: Counts,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let s = &sample.structure;
    let n = s.len();
    let nf = m.n_features();
    let st = potential::forward_state(m, prep, &ChargeMode::Equilibrate)?;
    let energy = st.atom_energies.iter().sum::<f64>() + st.elec_energy;

    let mut loss = 0.0;
    let mut e_bar = 0.0;
    if cfg.w_e > 0.0 {
        let r = (energy - sample.energy) / n as f64;
        loss += cfg.w_e * r * r / counts.energies as f64;
        e_bar = 2.0 * cfg.w_e * r / (n as f64 * counts.energies as f64);
    }

    let mut f_bar: Option<Vec<Vec3>> = None;
    if cfg.w_f > 0.0 {
        if let Some(f_ref) = &sample.forces {
            let der = potential::derivatives(m, s, prep, &st);
            let scale = cfg.w_f / counts.force_components as f64;
            let mut fb = vec![math::ZERO3; n];
            for i in 0..n {
                for c in 0..3 {
                    let f = -(der.short_grad[i][c] + der.elec_grad[i][c]);
                    let d = f - f_ref[i][c];
                    loss += scale * d * d;
                    fb[i][c] = 2.0 * scale * d;
                }
            }
            f_bar = Some(fb);
        }
    }

    let mut q_bar_loss = vec![0.0; n];
    let charge_term = cfg.w_q > 0.0 && m.use_electrostatics && sample.charges.is_some();
    if charge_term {
        let q_ref = sample.charges.as_ref().unwrap();
        let scale = cfg.w_q / counts.charges as f64;
        for i in 0..n {
            let d = st.charges[i] - q_ref[i];
            loss += scale * d * d;
            q_bar_loss[i] = 2.0 * scale * d;
        }
    }

    let Some(grad) = grad else {
        return Ok(loss);
    };
    let ne = m.energy_net.n_params();
    let (g_e, g_chi) = grad.split_at_mut(ne);
    let scale = &m.standardization.scale;

    // u_i = ∂G_i/∂R · F̄ in standardized coordinates
    let u: Option<Vec<Vec<f64>>> = f_bar.as_ref().map(|fb| {
        prep.descriptors
            .atoms
            .par_iter()
            .enumerate()
            .map(|(i, a)| {
                let nn = a.n_neighbors();
                let deltas: Vec<Vec3> = a.neighbors.iter().map(|(j, _)| math::sub(fb[*j], fb[i])).collect();
                (0..nf)
                    .map(|k| {
                        let row = &a.derivs[k * nn..(k + 1) * nn];
                        row.iter().zip(&deltas).map(|(d, v)| math::dot(*d, *v)).sum::<f64>() / scale[k]
                    })
                    .collect()
            })
            .collect()
    });

    let mut s_chi = vec![0.0; n];
    let mut a_q = vec![0.0; n];
    let mut a_l = vec![0.0; n];
    let mut e_adj = vec![0.0; n];
    if let (Some(el), Some(fb)) = (&prep.elec, &f_bar) {
        let u = u.as_ref().unwrap();
        for i in 0..n {
            s_chi[i] = st.g_chi[i].iter().zip(&u[i]).map(|(a, b)| a * b).sum();
        }
        for p in &el.kernel.pairs {
            let a = p.derivative / p.distance * math::dot(p.vector, math::sub(fb[p.j], fb[p.i]));
            a_q[p.i] += a * st.charges[p.j];
            a_q[p.j] += a * st.charges[p.i];
            a_l[p.i] += a * st.lambda[p.j];
            a_l[p.j] += a * st.lambda[p.i];
        }
        if m.use_charge_input {
            let lam_bar: Vec<f64> = (0..n).map(|i| -s_chi[i] - a_q[i]).collect();
            e_adj = el.solver.solve(&lam_bar, 0.0)?.0;
        }
    }

    // energy network, all atoms; returns the charge component of H·t
    let mut h_t_q = vec![0.0; n];
    for i in 0..n {
        let tangent: Option<Vec<f64>> = u.as_ref().map(|u| {
            let mut t: Vec<f64> = u[i].iter().map(|x| -x).collect();
            if m.use_charge_input {
                t.push(-e_adj[i]);
            }
            t
        });
        let adj = m.energy_net.backward(&st.e_fw[i], e_bar, tangent.as_deref(), g_e);
        if m.use_charge_input && tangent.is_some() {
            h_t_q[i] = e_bar * st.g_e[i][nf] - adj[nf];
        }
    }

    if let Some(el) = &prep.elec {
        let q_bar: Vec<f64> = (0..n)
            .map(|i| -(s_chi[i] + a_q[i] - a_l[i] + h_t_q[i]) + q_bar_loss[i])
            .collect();
        let pq = if q_bar.iter().any(|x| *x != 0.0) {
            el.solver.solve(&q_bar, 0.0)?.0
        } else {
            vec![0.0; n]
        };
        for i in 0..n {
            let c = st.charges[i] - st.lambda[i];
            let chi_bar = e_bar * c - pq[i];
            let tangent: Option<Vec<f64>> = u.as_ref().map(|u| u[i].iter().map(|x| -c * x).collect());
            m.chi_net.backward(&st.chi_fw[i], chi_bar, tangent.as_deref(), g_chi);
        }
    }
    Ok(loss)
}

fn batch_loss(
    m: &PotentialModel,
    items: &[(&Sample, &Prepared)],
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let counts = Counts::of(items.iter().map(|(s, _)| *s), m.use_electrostatics);
    let active = (cfg.w_e > 0.0 && counts.energies > 0)
        || (cfg.w_f > 0.0 && counts.force_components > 0)
        || (cfg.w_q > 0.0 && counts.charges > 0);
    if !active {
        return Err(Error::Data(
            "no loss term has both a positive weight and reference data".into(),
        ));
    }
    let np = m.energy_net.n_params() + m.chi_net.n_params();
    let parts: Vec<Result<(f64, Vec<f64>)>> = items
        .par_iter()
        .map(|(s, p)| {
            if with_grad {
                let mut g = vec![0.0; np];
                let l = sample_loss(m, s, p, cfg, counts, Some(&mut g))?;
                Ok((l, g))
            } else {
                Ok((sample_loss(m, s, p, cfg, counts, None)?, Vec::new()))
            }
        })
        .collect();
    let mut total = 0.0;
    let mut grad = if with_grad { vec![0.0; np] } else { Vec::new() };
    for part in parts {
        let (l, g) = part?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Descriptors and Coulomb data for every sample.
pub fn prepare_all(m: &PotentialModel, samples: &[Sample]) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| {
            m.check_species(&s.structure)?;
            let d = descriptors::describe(&s.structure, &m.acsf)?;
            m.prepare(&s.structure, d)
        })
        .collect()
}

/// Loss and gradient with respect to [`model_params`] for a batch.
pub fn loss(m: &PotentialModel, batch: &[Sample], cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    for s in batch {
        s.validate()?;
    }
    let preps = prepare_all(m, batch)?;
    let items: Vec<(&Sample, &Prepared)> = batch.iter().zip(&preps).collect();
    batch_loss(m, &items, cfg, true)
}

/// Per-epoch record. Energies in meV/atom, forces in meV/Å, charges in me.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
    pub train: Rmse,
    pub val: Rmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Charges,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rmse {
    pub energy: Option<f64>,
    pub force: Option<f64>,
    pub charge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    /// Loss became non-finite; the model is the last good checkpoint.
    Diverged,
    /// Step size shrank below 1e-12 of its start value.
    StepUnderflow,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PotentialModel,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    /// Columns: epoch, rmse_e_train, rmse_e_val, rmse_f_train, rmse_f_val,
    /// rmse_q_train, rmse_q_val. Absent metrics are empty fields.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,rmse_e_train,rmse_e_val,rmse_f_train,rmse_f_val,rmse_q_train,rmse_q_val\n");
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                f(r.train.energy),
                f(r.val.energy),
                f(r.train.force),
                f(r.val.force),
                f(r.train.charge),
                f(r.val.charge)
            );
        }
        out
    }
}

fn rmse_of(samples: &[&Sample], evals: &[SampleEval]) -> Rmse {
    if samples.is_empty() {
        return Rmse::default();
    }
    let m = Metrics::from_evals(samples, evals);
    Rmse {
        energy: Some(m.energy.rmse),
        force: m.force.map(|s| s.rmse),
        charge: m.charge.map(|s| s.rmse),
    }
}

/// Deterministic train/validation split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = ((n as f64) * val_fraction).round() as usize;
    if n_val == 0 {
        return (idx, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = n_val.min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn loss_from_evals(samples: &[&Sample], evals: &[SampleEval], cfg: &TrainConfig, use_charges: bool) -> f64 {
    let counts = Counts::of(samples.iter().copied(), use_charges);
    let mut loss = 0.0;
    for (s, e) in samples.iter().zip(evals) {
        let n = s.structure.len() as f64;
        if cfg.w_e > 0.0 {
            let r = (e.energy - s.energy) / n;
            loss += cfg.w_e * r * r / counts.energies as f64;
        }
        if cfg.w_f > 0.0 {
            if let (Some(fr), Some(fp)) = (&s.forces, &e.forces) {
                for (a, b) in fr.iter().flatten().zip(fp.iter().flatten()) {
                    loss += cfg.w_f * (b - a) * (b - a) / counts.force_components as f64;
                }
            }
        }
        if cfg.w_q > 0.0 && use_charges {
            if let Some(qr) = &s.charges {
                for (a, b) in qr.iter().zip(&e.charges) {
                    loss += cfg.w_q * (b - a) * (b - a) / counts.charges as f64;
                }
            }
        }
    }
    loss
}

fn evaluate_items(m: &PotentialModel, items: &[(&Sample, &Prepared)], need_forces: bool) -> Result<Vec<SampleEval>> {
    items
        .par_iter()
        .map(|(s, p)| evaluate_one(m, s, p, need_forces))
        .collect()
}

struct Trainer<'a> {
    model: PotentialModel,
    train: Vec<(&'a Sample, &'a Prepared)>,
    val: Vec<(&'a Sample, &'a Prepared)>,
    rng: ChaCha8Rng,
    history: Vec<EpochRecord>,
}

impl Trainer<'_> {
    fn metrics(&self, cfg: &TrainConfig) -> Result<(f64, Rmse, Rmse)> {
        let tr = evaluate_items(&self.model, &self.train, true)?;
        let va = evaluate_items(&self.model, &self.val, true)?;
        let ts: Vec<&Sample> = self.train.iter().map(|(s, _)| *s).collect();
        let vs: Vec<&Sample> = self.val.iter().map(|(s, _)| *s).collect();
        let loss = loss_from_evals(&ts, &tr, cfg, self.model.use_electrostatics);
        Ok((loss, rmse_of(&ts, &tr), rmse_of(&vs, &va)))
    }

    /// Momentum descent; an epoch that raises the training loss is undone
    /// and the step halved.
    fn run(&mut self, phase: Phase, cfg: &TrainConfig, epochs: usize) -> Result<StopReason> {
        let ne = self.model.energy_net.n_params();
        let mut params = model_params(&self.model);
        let mut velocity = vec![0.0; params.len()];
        let mut lr = cfg.lr;
        let (mut best, _, _) = self.metrics(cfg)?;
        if !best.is_finite() {
            return Ok(StopReason::Diverged);
        }
        let batch = if cfg.batch_size == 0 {
            self.train.len()
        } else {
            cfg.batch_size
        };
        for _ in 0..epochs {
            let start = params.clone();
            let coasting = velocity.iter().all(|v| *v == 0.0);
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            if batch < self.train.len() {
                order.shuffle(&mut self.rng);
            }
            let mut failed = false;
            for chunk in order.chunks(batch) {
                let items: Vec<(&Sample, &Prepared)> = chunk.iter().map(|&k| self.train[k]).collect();
                let (l, mut g) = match batch_loss(&self.model, &items, cfg, true) {
                    Ok(v) => v,
                    Err(Error::Numerical(_)) => {
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    failed = true;
                    break;
                }
                if phase == Phase::Charges {
                    g[..ne].iter_mut().for_each(|x| *x = 0.0);
                }
                for ((p, v), gk) in params.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                    *v = cfg.momentum * *v - lr * gk;
                    *p += *v;
                }
                set_model_params(&mut self.model, &params);
            }
            let measured = if failed { None } else { self.metrics(cfg).ok() };
            let accepted = match measured {
                Some((loss, tr, va)) if loss.is_finite() && loss <= best => {
                    best = loss;
                    lr = (lr * cfg.lr_growth).min(cfg.lr);
                    Some((tr, va))
                }
                _ => None,
            };
            let (tr, va) = match accepted {
                Some(v) => v,
                None => {
                    params = start;
                    set_model_params(&mut self.model, &params);
                    if coasting || failed {
                        lr *= 0.5;
                        if lr < 1e-12 * cfg.lr {
                            return Ok(StopReason::StepUnderflow);
                        }
                    }
                    velocity.iter_mut().for_each(|v| *v = 0.0);
                    let (_, tr, va) = self.metrics(cfg)?;
                    (tr, va)
                }
            };
            self.history.push(EpochRecord {
                epoch: self.history.len() + 1,
                phase,
                loss: best,
                lr,
                train: tr,
                val: va,
            });
        }
        Ok(StopReason::Completed)
    }

    /// Shifts the energy output bias so the mean per-atom residual vanishes.
    fn center_energy(&mut self) -> Result<()> {
        let evals = evaluate_items(&self.model, &self.train, false)?;
        let shift = self
            .train
            .iter()
            .zip(&evals)
            .map(|((s, _), e)| (s.energy - e.energy) / s.structure.len() as f64)
            .sum::<f64>()
            / self.train.len() as f64;
        self.model.energy_net.output.bias[0] += shift / self.model.energy_net.output_scale;
        Ok(())
    }
}

/// Output scale of the energy network: RMS force component (eV/Å × 1 Å)
/// when forces are labelled, else the spread of per-atom energies, else 1.
fn label_scale<'a>(samples: impl Iterator<Item = &'a Sample> + Clone) -> f64 {
    let (mut sq, mut n) = (0.0, 0usize);
    for f in samples.clone().filter_map(|s| s.forces.as_ref()) {
        for x in f.iter().flatten() {
            sq += x * x;
            n += 1;
        }
    }
    let mut scale = if n > 0 { (sq / n as f64).sqrt() } else { 0.0 };
    if !(scale > 1e-6) {
        let e: Vec<f64> = samples.map(|s| s.energy / s.structure.len() as f64).collect();
        let mean = e.iter().sum::<f64>() / e.len().max(1) as f64;
        scale = (e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / e.len().max(1) as f64).sqrt();
    }
    if scale.is_finite() && scale > 1e-6 {
        scale
    } else {
        1.0
    }
}

/// Fits `m` to `dataset`. Standardization is refit on the training split,
/// the electronegativity head is first fit to charges alone (when charges
/// are available), then all terms are trained jointly. Runs with the same
/// seed are bitwise identical.
pub fn train(m: &PotentialModel, dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    m.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for s in dataset {
        s.validate()?;
        m.check_species(&s.structure)?;
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    let mut model = m.clone();
    let descs: Vec<_> = dataset
        .par_iter()
        .map(|s| descriptors::describe(&s.structure, &model.acsf))
        .collect::<Result<_>>()?;
    let rows = train_idx
        .iter()
        .flat_map(|&k| descs[k].atoms.iter().map(|a| a.values.as_slice()));
    model.standardization = Standardization::fit(model.n_features(), rows);
    let preps: Vec<Prepared> = dataset
        .iter()
        .zip(descs)
        .map(|(s, d)| model.prepare(&s.structure, d))
        .collect::<Result<_>>()?;

    let mut t = Trainer {
        model,
        train: train_idx.iter().map(|&k| (&dataset[k], &preps[k])).collect(),
        val: val_idx.iter().map(|&k| (&dataset[k], &preps[k])).collect(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        history: Vec::new(),
    };

    let scale = label_scale(t.train.iter().map(|(s, _)| *s));
    t.model.energy_net.rescale_output(scale);

    let has_charges = t.train.iter().any(|(s, _)| s.charges.is_some());
    let mut stop = StopReason::Completed;
    if t.model.use_electrostatics && cfg.w_q > 0.0 && has_charges && cfg.charge_epochs > 0 {
        stop = t.run(Phase::Charges, &cfg.charge_phase(), cfg.charge_epochs)?;
    }
    if stop == StopReason::Completed {
        t.center_energy()?;
        stop = t.run(Phase::Joint, cfg, cfg.epochs)?;
    }
    Ok(TrainOutcome {
        model: t.model,
        history: t.history,
        stop,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

impl Stat {
    fn of(residuals: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
        for r in residuals {
            sq += r * r;
            abs += r.abs();
            n += 1;
        }
        (n > 0).then(|| Stat {
            rmse: (sq / n as f64).sqrt(),
            mae: abs / n as f64,
            count: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityRow {
    pub frame: usize,
    pub n_atoms: usize,
    pub e_ref: f64,
    pub e_pred: f64,
}

/// Energy in meV/atom, forces in meV/Å, charges in me. Force and charge
/// statistics are absent when no frame has the corresponding labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub energy: Stat,
    pub force: Option<Stat>,
    pub charge: Option<Stat>,
    pub parity: Vec<ParityRow>,
}

impl Metrics {
    fn from_evals(samples: &[&Sample], evals: &[SampleEval]) -> Self {
        let energy = Stat::of(
            samples
                .iter()
                .zip(evals)
                .map(|(s, e)| 1000.0 * (e.energy - s.energy) / s.structure.len() as f64),
        )
        .unwrap_or(Stat {
            rmse: 0.0,
            mae: 0.0,
            count: 0,
        });
        let force = Stat::of(samples.iter().zip(evals).flat_map(|(s, e)| {
            let pairs: Vec<f64> = match (&s.forces, &e.forces) {
                (Some(r), Some(p)) => r
                    .iter()
                    .flatten()
                    .zip(p.iter().flatten())
                    .map(|(a, b)| 1000.0 * (b - a))
                    .collect(),
                _ => Vec::new(),
            };
            pairs
        }));
        let charge = Stat::of(samples.iter().zip(evals).flat_map(|(s, e)| {
            let v: Vec<f64> = match &s.charges {
                Some(r) => r.iter().zip(&e.charges).map(|(a, b)| 1000.0 * (b - a)).collect(),
                None => Vec::new(),
            };
            v
        }));
        let parity = samples
            .iter()
            .zip(evals)
            .enumerate()
            .map(|(k, (s, e))| ParityRow {
                frame: k,
                n_atoms: s.structure.len(),
                e_ref: s.energy,
                e_pred: e.energy,
            })
            .collect();
        Metrics {
            energy,
            force,
            charge,
            parity,
        }
    }

    /// Columns: target, unit, count, rmse, mae.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,unit,count,rmse,mae\n");
        let mut row = |name: &str, unit: &str, s: Option<Stat>| {
            let _ = match s {
                Some(s) => writeln!(out, "{name},{unit},{},{},{}", s.count, s.rmse, s.mae),
                None => writeln!(out, "{name},{unit},0,,"),
            };
        };
        row("energy", "meV/atom", Some(self.energy));
        row("force", "meV/A", self.force);
        row("charge", "me", self.charge);
        out
    }

    /// Columns: frame, n_atoms, e_ref_ev, e_pred_ev.
    pub fn parity_csv(&self) -> String {
        let mut out = String::from("frame,n_atoms,e_ref_ev,e_pred_ev\n");
        for r in &self.parity {
            let _ = writeln!(out, "{},{},{},{}", r.frame, r.n_atoms, r.e_ref, r.e_pred);
        }
        out
    }
}

pub fn evaluate(m: &PotentialModel, dataset: &[Sample]) -> Result<Metrics> {
    let preps = prepare_all(m, dataset)?;
    let items: Vec<(&Sample, &Prepared)> = dataset.iter().zip(&preps).collect();
    let evals = evaluate_items(m, &items, true)?;
    let samples: Vec<&Sample> = dataset.iter().collect();
    Ok(Metrics::from_evals(&samples, &evals))
}

/// `frames` perturbed 8-atom argon clusters (cube corners at the pair
/// minimum, each coordinate displaced uniformly by up to `jitter` Å),
/// labelled with energies and forces from `oracle`.
pub fn synthetic_lj_dataset(oracle: &PairOracle, frames: usize, jitter: f64, seed: u64) -> Result<Vec<Sample>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = oracle.r_min();
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut pos = Vec::with_capacity(8);
        for corner in 0..8 {
            let base = [
                a * f64::from(corner & 1),
                a * f64::from((corner >> 1) & 1),
                a * f64::from((corner >> 2) & 1),
            ];
            pos.push([
                base[0] + rng.random_range(-jitter..=jitter),
                base[1] + rng.random_range(-jitter..=jitter),
                base[2] + rng.random_range(-jitter..=jitter),
            ]);
        }
        let s = Structure::cluster(pos, vec![18; 8])?;
        let ev = oracle.evaluate(&s)?;
        out.push(Sample {
            structure: s,
            energy: ev.energy,
            forces: Some(ev.forces),
            charges: None,
        });
    }
    Ok(out)
}

/// Model layout used with [`synthetic_lj_dataset`].
pub fn synthetic_model_spec(seed: u64) -> ModelSpec {
    ModelSpec {
        acsf: AcsfParams::radial_grid(6.0),
        hidden: vec![16, 16],
        elements: vec![18],
        use_electrostatics: false,
        use_charge_input: None,
        elec_cutoff: None,
        seed,
    }
}
