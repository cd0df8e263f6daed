//! train, predict, cycle and selftest.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use mamforge_core::calculator::Evaluation;
use mamforge_core::config::{self, Config};
use mamforge_core::cyclesim::{self, CycleStop, TRACE_HEADER};
use mamforge_core::oracle::PairOracle;
use mamforge_core::potential::{self, ModelCalculator, PotentialModel};
use mamforge_core::training::{self, Sample};
use mamforge_core::xyz::{self, Frame};
use mamforge_core::{validation, Calculator, Error, Structure};

use crate::manifest::{self, Recorder};
use crate::{CliResult, Common, Failure};

pub const ORACLE: &str = "oracle:lj";

pub fn load_config(common: &Common) -> CliResult<Config> {
    let mut c = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    for s in &common.overrides {
        c.set(s)?;
    }
    Ok(c)
}

/// The bundled pair oracle or a trained model file.
pub enum Backend {
    Oracle(PairOracle),
    Model(Box<ModelCalculator>),
}

impl Backend {
    pub fn open(spec: &str, c: &Config, rec: &mut Recorder) -> CliResult<Self> {
        if spec == ORACLE {
            return Ok(Backend::Oracle(config::oracle(c)?));
        }
        let path = Path::new(spec);
        rec.input(path)?;
        let mut m = PotentialModel::load(path)?;
        config::apply_element_overrides(c, &mut m)?;
        Ok(Backend::Model(Box::new(ModelCalculator::new(m))))
    }

    pub fn calculator(&self) -> &dyn Calculator {
        match self {
            Backend::Oracle(o) => o,
            Backend::Model(m) => m.as_ref(),
        }
    }

    /// Evaluation plus charges when the backend has them.
    fn predict(&self, s: &Structure) -> CliResult<(Evaluation, Option<Vec<f64>>)> {
        match self {
            Backend::Oracle(o) => Ok((o.evaluate(s)?, None)),
            Backend::Model(m) => {
                let p = potential::predict(s, &m.model)?;
                let q = m.model.use_electrostatics.then(|| p.charges.clone());
                let ev = Evaluation {
                    energy: p.energy,
                    forces: p.forces,
                    atom_virials: p.atom_virials,
                };
                ev.check_finite()?;
                Ok((ev, q))
            }
        }
    }
}

fn manifest_target(common: &Common, primary: &Path) -> PathBuf {
    common.manifest.clone().unwrap_or_else(|| manifest::beside(primary))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Extended-XYZ training frames with energies, or `oracle:lj` for the
    /// bundled synthetic dataset.
    #[arg(long)]
    pub data: String,
    /// Trained model (JSON).
    #[arg(long)]
    pub model_out: PathBuf,
    /// Per-epoch RMSE history (CSV).
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Final per-frame parity table (CSV).
    #[arg(long)]
    pub parity_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut rec = Recorder::new("train", Some(manifest_target(&a.common, &a.model_out)));
    let c = match load_config(&a.common) {
        Ok(c) => c,
        Err(e) => return rec.finish(None, Err(e)),
    };
    let result = train_inner(&a, &c, &mut rec);
    rec.finish(Some(&c), result)
}

fn train_inner(a: &TrainArgs, c: &Config, rec: &mut Recorder) -> CliResult<()> {
    let cfg = config::train_config(c)?;
    rec.manifest.seed = Some(cfg.seed);
    let data: Vec<Sample> = if a.data == ORACLE {
        let oracle = config::oracle(c)?;
        let frames = c.get("data.frames", 30usize)?;
        let jitter = c.get("data.jitter", 0.2)?;
        let seed = c.get("data.seed", cfg.seed)?;
        training::synthetic_lj_dataset(&oracle, frames, jitter, seed)?
    } else {
        let p = Path::new(&a.data);
        rec.input(p)?;
        training::load_dataset(p)?
    };
    let mut species: Vec<u8> = data.iter().flat_map(|s| s.structure.species.iter().copied()).collect();
    species.sort_unstable();
    species.dedup();
    let spec = config::model_spec(c, &species)?;
    let mut model = PotentialModel::new(&spec)?;
    config::apply_element_overrides(c, &mut model)?;
    c.finish()?;

    let out = training::train(&model, &data, &cfg)?;
    out.model.save(&a.model_out)?;
    if let Some(p) = &a.metrics_out {
        std::fs::write(p, out.history_csv())?;
    }
    let metrics = training::evaluate(&out.model, &data)?;
    if let Some(p) = &a.parity_out {
        std::fs::write(p, metrics.parity_csv())?;
    }
    print!("{}", metrics.to_csv());
    rec.note("epochs", out.history.len());
    rec.note("stop", format!("{:?}", out.stop));
    if out.stop == training::StopReason::Diverged {
        return Err(Error::Numerical("training diverged; saved the last finite model".into()).into());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Extended-XYZ input (one or more frames).
    #[arg(long)]
    pub structure: PathBuf,
    /// Model file or `oracle:lj`.
    #[arg(long)]
    pub model: String,
    /// Extended-XYZ output with energy, forces and charges.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame summary (CSV); defaults to `<out>.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub const SUMMARY_HEADER: &str = "frame,n_atoms,energy_ev,fmax_ev_per_a,total_charge_e,\
sxx_ev_per_a3,sxy_ev_per_a3,sxz_ev_per_a3,syx_ev_per_a3,syy_ev_per_a3,syz_ev_per_a3,szx_ev_per_a3,szy_ev_per_a3,szz_ev_per_a3";

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let mut rec = Recorder::new("predict", Some(manifest_target(&a.common, &a.out)));
    let c = match load_config(&a.common) {
        Ok(c) => c,
        Err(e) => return rec.finish(None, Err(e)),
    };
    let result = predict_inner(&a, &c, &mut rec);
    rec.finish(Some(&c), result)
}

fn predict_inner(a: &PredictArgs, c: &Config, rec: &mut Recorder) -> CliResult<()> {
    rec.input(&a.structure)?;
    let frames = xyz::read_frames(&a.structure)?;
    let backend = Backend::open(&a.model, c, rec)?;
    c.finish()?;
    rec.note("calculator", backend.calculator().name());
    let mut xyz_out = String::new();
    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for (k, f) in frames.iter().enumerate() {
        let s = &f.structure;
        let (ev, charges) = backend.predict(s)?;
        let stress = if s.has_cell() {
            Some(ev.stress(s.volume())?)
        } else {
            None
        };
        let _ = write!(
            csv,
            "{k},{},{},{},{}",
            s.len(),
            ev.energy,
            ev.max_force(),
            charges.as_ref().map_or(s.total_charge, |q| q.iter().sum())
        );
        for p in 0..3 {
            for q in 0..3 {
                match stress {
                    Some(m) => write!(csv, ",{}", m[p][q]),
                    None => write!(csv, ","),
                }
                .ok();
            }
        }
        csv.push('\n');
        xyz_out.push_str(&xyz::write_frame(&Frame {
            structure: s.clone(),
            energy: Some(ev.energy),
            forces: Some(ev.forces),
            charges,
        }));
    }
    std::fs::write(&a.out, xyz_out)?;
    let summary = a.summary.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".csv");
        PathBuf::from(p)
    });
    std::fs::write(summary, &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct CycleArgs {
    /// Host structure (extended-XYZ, first frame).
    #[arg(long)]
    pub structure: PathBuf,
    /// Model file or `oracle:lj`.
    #[arg(long)]
    pub model: String,
    /// Trace CSV, written and flushed after every step.
    #[arg(long)]
    pub trace_out: PathBuf,
    /// Structures after each step (extended-XYZ).
    #[arg(long)]
    pub frames_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn cycle(a: CycleArgs) -> CliResult<()> {
    let mut rec = Recorder::new("cycle", Some(manifest_target(&a.common, &a.trace_out)));
    let c = match load_config(&a.common) {
        Ok(c) => c,
        Err(e) => return rec.finish(None, Err(e)),
    };
    let result = cycle_inner(&a, &c, &mut rec);
    rec.finish(Some(&c), result)
}

fn cycle_inner(a: &CycleArgs, c: &Config, rec: &mut Recorder) -> CliResult<()> {
    rec.input(&a.structure)?;
    let s = xyz::read_frames(&a.structure)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data("structure file has no frames".into()))?
        .structure;
    let (cfg, schedule) = config::cycle_config(c)?;
    rec.manifest.seed = Some(cfg.seed);
    let backend = Backend::open(&a.model, c, rec)?;
    c.finish()?;
    let calc = backend.calculator();

    let mut trace = BufWriter::new(File::create(&a.trace_out)?);
    writeln!(trace, "{TRACE_HEADER}")?;
    trace.flush()?;
    let mut frames = a.frames_out.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    let run = cyclesim::run_cycle_with(&s, calc, &cfg, &schedule, |r, st| {
        writeln!(trace, "{}", r.csv_row())?;
        trace.flush()?;
        if let Some(f) = frames.as_mut() {
            f.write_all(xyz::write_structure(st).as_bytes())?;
            f.flush()?;
        }
        Ok(())
    })?;
    let t = &run.trace;
    rec.note("calculator", &t.calculator);
    rec.note("bias_ev_per_a", t.bias);
    rec.note("bias_direction", format!("{:?}", t.bias_direction));
    rec.note(
        "stress_region",
        format!(
            "axis {} [{}, {})",
            t.stress_region.axis, t.stress_region.min, t.stress_region.max
        ),
    );
    rec.note("steps", t.records.len());
    let stop = match t.stop {
        CycleStop::Completed => "completed".to_string(),
        CycleStop::ContentLimit { step, x } => format!("content limit after step {step} at x = {x}"),
    };
    println!("{} steps recorded; {stop}", t.records.len());
    rec.note("stop", stop);
    Ok(())
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Run only these criteria (comma-separated ids 1-11).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u8>,
    /// Where to write the run manifest; stderr when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn selftest(a: SelftestArgs) -> CliResult<()> {
    let rec = Recorder::new("selftest", a.manifest.clone());
    let ids: Vec<u8> = if a.only.is_empty() {
        (1..=11).collect()
    } else {
        a.only.clone()
    };
    let result = (|| {
        let mut failed = Vec::new();
        for id in ids {
            let c = validation::run(id).ok_or_else(|| Failure::Usage(format!("no criterion {id}")))?;
            println!("{}", c.line());
            if !c.passed {
                failed.push(id.to_string());
            }
        }
        if failed.is_empty() {
            println!("selftest passed");
            Ok(())
        } else {
            Err(Failure::Core(Error::Numerical(format!(
                "criteria failed: {}",
                failed.join(", ")
            ))))
        }
    })();
    rec.finish(None, result)
}
