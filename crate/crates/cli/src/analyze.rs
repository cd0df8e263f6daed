//! `analyze <kind>`: one CSV row per input, inputs echoed before outputs.
//!
//! Scalar kinds take `--<field> <value>` flags or a `--batch` CSV whose header
//! names the fields. `elastic`, `sliding` and `distortion` read files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mamforge_core::chemomech::{self, EnergyTriple, SlidingProfile, VoigtTensor};
use mamforge_core::config::{self, Config};
use mamforge_core::xyz;
use mamforge_core::Error;

use crate::commands::{load_config, Backend};
use crate::manifest::Recorder;
use crate::{CliResult, Common, Failure};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Work of separation from slab and interface energies.
    Wsep,
    /// Interface potential gradient.
    Pgrad,
    /// Interphase formation energy.
    Ef,
    /// SEI formation energy per reacted atom.
    Sei,
    /// Voigt bulk, shear and Young's moduli from C_ij.
    Moduli,
    /// Elastic constants of a relaxed structure by finite strains.
    Elastic,
    /// Sliding traction from a W_sep(l) profile.
    Sliding,
    /// Intercalation voltage.
    Voltage,
    /// Diffusion time and C-rate limit.
    Kinetics,
    /// Octahedral distortion measures.
    Distortion,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub kind: Kind,
    /// CSV of inputs, one row per case, header naming the fields.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Structure for `elastic` and `distortion` (extended-XYZ).
    #[arg(long)]
    pub structure: Option<PathBuf>,
    /// Model file or `oracle:lj` for `elastic`.
    #[arg(long)]
    pub model: Option<String>,
    /// Profile CSV for `sliding` with columns l_a, w_sep_j_per_m2.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Center atom index for `distortion`.
    #[arg(long)]
    pub center: Option<usize>,
    /// Six ligand indices for `distortion`.
    #[arg(long, value_delimiter = ',')]
    pub ligands: Vec<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Every scalar field name across kinds.
fn all_fields() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = Vec::new();
    for k in Kind::value_variants() {
        if let Some(s) = scalar(*k) {
            for n in s.inputs {
                if !names.contains(n) {
                    names.push(n);
                }
            }
        }
    }
    names
}

/// Registers `--<field> <number>` options on the `analyze` command.
pub fn add_field_args(cmd: clap::Command) -> clap::Command {
    let mut cmd = cmd;
    for name in all_fields() {
        let kinds: Vec<String> = Kind::value_variants()
            .iter()
            .filter(|k| scalar(**k).is_some_and(|s| s.inputs.contains(&name)))
            .map(|k| format!("{k:?}").to_lowercase())
            .collect();
        cmd = cmd.arg(
            clap::Arg::new(name)
                .long(name)
                .value_name("NUMBER")
                .value_parser(clap::value_parser!(f64))
                .allow_negative_numbers(true)
                .help_heading("Fields")
                .help(format!("input for {}", kinds.join(", "))),
        );
    }
    cmd
}

/// Field values present on the command line.
pub fn collect_fields(m: &clap::ArgMatches) -> BTreeMap<String, f64> {
    all_fields()
        .into_iter()
        .filter_map(|n| m.get_one::<f64>(n).map(|v| (n.to_string(), *v)))
        .collect()
}

struct Scalar {
    inputs: &'static [&'static str],
    /// Missing inputs take these values; `None` makes them required.
    defaults: fn(&str) -> Option<f64>,
    outputs: &'static [&'static str],
    eval: fn(&BTreeMap<String, f64>) -> mamforge_core::Result<Vec<f64>>,
}

const MODULI_FIELDS: [&str; 21] = [
    "c11", "c12", "c13", "c14", "c15", "c16", "c22", "c23", "c24", "c25", "c26", "c33", "c34", "c35", "c36", "c44",
    "c45", "c46", "c55", "c56", "c66",
];

fn required(_: &str) -> Option<f64> {
    None
}

fn zero(_: &str) -> Option<f64> {
    Some(0.0)
}

fn count(v: f64, name: &str) -> mamforge_core::Result<usize> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(Error::Data(format!("{name} must be a whole number, got {v}")));
    }
    Ok(v as usize)
}

fn scalar(kind: Kind) -> Option<Scalar> {
    let s = match kind {
        Kind::Wsep => Scalar {
            inputs: &["e1", "e2", "e12", "area"],
            defaults: required,
            outputs: &["w_sep_ev_per_a2", "w_sep_j_per_m2"],
            eval: |f| {
                let w = chemomech::work_of_separation(&EnergyTriple::new(f["e1"], f["e2"], f["e12"], f["area"])?)?;
                Ok(vec![w.ev_per_a2, w.j_per_m2])
            },
        },
        Kind::Pgrad => Scalar {
            inputs: &["u1", "u2", "d"],
            defaults: required,
            outputs: &["dphi_dz_v_per_a"],
            eval: |f| Ok(vec![chemomech::potential_gradient(f["u1"], f["u2"], f["d"])?]),
        },
        Kind::Ef => Scalar {
            inputs: &["ed", "eel"],
            defaults: required,
            outputs: &["e_f_ev"],
            eval: |f| Ok(vec![chemomech::interphase_formation_energy(f["ed"], f["eel"])]),
        },
        Kind::Sei => Scalar {
            inputs: &["esei", "ex", "eel", "nx"],
            defaults: required,
            outputs: &["e_f_sei_ev_per_atom"],
            eval: |f| {
                let n = count(f["nx"], "nx")?;
                Ok(vec![chemomech::sei_formation_energy(f["esei"], f["ex"], f["eel"], n)?])
            },
        },
        Kind::Moduli => Scalar {
            inputs: &MODULI_FIELDS,
            defaults: zero,
            outputs: &["b_gpa", "g_gpa", "e_young_gpa"],
            eval: |f| {
                let mut c = [[0.0; 6]; 6];
                for name in MODULI_FIELDS {
                    let b = name.as_bytes();
                    let (i, j) = ((b[1] - b'1') as usize, (b[2] - b'1') as usize);
                    c[i][j] = f[name];
                    c[j][i] = f[name];
                }
                let m = chemomech::voigt_moduli(&VoigtTensor::new(c)?)?;
                Ok(vec![m.bulk_gpa, m.shear_gpa, m.young_gpa])
            },
        },
        Kind::Voltage => Scalar {
            inputs: &["def", "n"],
            defaults: required,
            outputs: &["v_volt"],
            eval: |f| Ok(vec![chemomech::intercalation_voltage(f["def"], count(f["n"], "n")?)?]),
        },
        Kind::Kinetics => Scalar {
            inputs: &["lambda", "d"],
            defaults: required,
            outputs: &["tau_s", "c_rate_per_h"],
            eval: |f| {
                let k = chemomech::diffusion_kinetics(f["lambda"], f["d"])?;
                Ok(vec![k.tau_s, k.c_rate_per_h])
            },
        },
        Kind::Elastic | Kind::Sliding | Kind::Distortion => return None,
    };
    Some(s)
}

/// Header names with units for echoed inputs.
fn input_header(kind: Kind, name: &str) -> String {
    let unit = match (kind, name) {
        (Kind::Wsep, "area") => "a2",
        (Kind::Wsep, _) | (Kind::Pgrad, "u1" | "u2") | (Kind::Ef, _) | (Kind::Voltage, "def") => "ev",
        (Kind::Sei, "nx") | (Kind::Voltage, "n") => "",
        (Kind::Sei, _) => "ev",
        (Kind::Pgrad, "d") => "a",
        (Kind::Moduli, _) => "gpa",
        (Kind::Kinetics, "lambda") => "cm",
        (Kind::Kinetics, "d") => "cm2_per_s",
        _ => "",
    };
    if unit.is_empty() {
        name.to_string()
    } else {
        format!("{name}_{unit}")
    }
}

fn check_fields(kind: Kind, spec: &Scalar, given: &BTreeMap<String, f64>) -> CliResult<()> {
    match given.keys().find(|k| !spec.inputs.contains(&k.as_str())) {
        Some(k) => Err(Failure::Usage(format!(
            "--{k} is not a field of analyze {}; fields: {}",
            name(kind),
            spec.inputs.join(", ")
        ))),
        None => Ok(()),
    }
}

fn name(kind: Kind) -> String {
    format!("{kind:?}").to_lowercase()
}

fn complete(spec: &Scalar, mut given: BTreeMap<String, f64>) -> CliResult<BTreeMap<String, f64>> {
    for name in spec.inputs {
        if !given.contains_key(*name) {
            let d = (spec.defaults)(name).ok_or_else(|| Failure::Usage(format!("missing --{name}")))?;
            given.insert(name.to_string(), d);
        }
    }
    Ok(given)
}

fn scalar_rows(kind: Kind, spec: &Scalar, rows: &[BTreeMap<String, f64>]) -> CliResult<String> {
    let mut header: Vec<String> = spec.inputs.iter().map(|n| input_header(kind, n)).collect();
    header.extend(spec.outputs.iter().map(|s| s.to_string()));
    let mut out = header.join(",") + "\n";
    for r in rows {
        let values = (spec.eval)(r)?;
        let cells: Vec<String> = spec
            .inputs
            .iter()
            .map(|n| r[*n].to_string())
            .chain(values.iter().map(f64::to_string))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn read_batch(path: &Path, spec: &Scalar) -> CliResult<Vec<BTreeMap<String, f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let headers: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    for h in &headers {
        if !spec.inputs.contains(&h.as_str()) {
            return Err(Error::Config(format!(
                "batch column {h:?} is not a field; fields: {}",
                spec.inputs.join(", ")
            ))
            .into());
        }
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let mut given = BTreeMap::new();
        for (h, cell) in headers.iter().zip(rec.iter()) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("batch row {}: {h} = {cell:?} is not a number", n + 1)))?;
            given.insert(h.clone(), v);
        }
        rows.push(complete(spec, given).map_err(|f| match f {
            Failure::Usage(m) => Failure::Core(Error::Data(format!("batch row {}: {m}", n + 1))),
            other => other,
        })?);
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Failure {
    Failure::Core(Error::Data(format!("csv: {e}")))
}

fn no_fields(kind: Kind, fields: &BTreeMap<String, f64>) -> CliResult<()> {
    match fields.keys().next() {
        Some(f) => Err(Failure::Usage(format!(
            "--{f} is not an input of analyze {}",
            name(kind)
        ))),
        None => Ok(()),
    }
}

fn need<'a, T>(v: &'a Option<T>, flag: &str, kind: Kind) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| Failure::Usage(format!("analyze {} needs --{flag}", name(kind))))
}

fn elastic(a: &AnalyzeArgs, c: &Config, rec: &mut Recorder) -> CliResult<String> {
    let path = need(&a.structure, "structure", a.kind)?;
    rec.input(path)?;
    let s = xyz::read_frames(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data("structure file has no frames".into()))?
        .structure;
    let backend = Backend::open(need(&a.model, "model", a.kind)?, c, rec)?;
    let delta = config::elastic_delta(c)?;
    c.finish()?;
    let r = chemomech::elastic_constants(&s, backend.calculator(), delta)?;
    rec.note("delta", r.delta);
    rec.note("relax_gate_ev_per_a", r.relax_gate);
    rec.note("max_force_ev_per_a", r.max_force);
    rec.note("reference_stress_gpa", format!("{:?}", r.reference_stress_gpa));
    let m = chemomech::voigt_moduli(&r.tensor)?;
    let mut out = String::from("row,c1_gpa,c2_gpa,c3_gpa,c4_gpa,c5_gpa,c6_gpa\n");
    for (i, row) in r.tensor.c.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{},{}", i + 1, cells.join(","));
    }
    let _ = writeln!(
        out,
        "b_gpa,{}\ng_gpa,{}\ne_young_gpa,{}",
        m.bulk_gpa, m.shear_gpa, m.young_gpa
    );
    Ok(out)
}

fn sliding(a: &AnalyzeArgs, rec: &mut Recorder) -> CliResult<String> {
    let path = need(&a.profile, "profile", a.kind)?;
    rec.input(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let (mut l, mut w) = (Vec::new(), Vec::new());
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let cell = |k: usize| -> CliResult<f64> {
            rec.get(k)
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Data(format!("profile row {}: expected two numbers", n + 1)).into())
        };
        l.push(cell(0)?);
        w.push(cell(1)?);
    }
    let p = SlidingProfile::new(l, w)?;
    let t = chemomech::sliding_traction(&p)?;
    let mut out = String::from("l_a,w_sep_j_per_m2,traction_j_per_m2_per_a,tau_max_j_per_m2_per_a\n");
    for k in 0..p.l.len() {
        let _ = writeln!(out, "{},{},{},{}", p.l[k], p.w_sep[k], t.traction[k], t.tau_max);
    }
    Ok(out)
}

fn distortion(a: &AnalyzeArgs, rec: &mut Recorder) -> CliResult<String> {
    let path = need(&a.structure, "structure", a.kind)?;
    let center = *need(&a.center, "center", a.kind)?;
    if a.ligands.len() != 6 {
        return Err(Failure::Usage(
            "analyze distortion needs --ligands with six indices".into(),
        ));
    }
    rec.input(path)?;
    let s = xyz::read_frames(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data("structure file has no frames".into()))?
        .structure;
    let d = chemomech::octahedral_distortion(&s, center, &a.ligands)?;
    let ligands: Vec<String> = a.ligands.iter().map(usize::to_string).collect();
    Ok(format!(
        "center,ligands,angle_variance_deg2,quadratic_elongation,off_center_a,volume_a3\n{center},{},{},{},{},{}\n",
        ligands.join(" "),
        d.angle_variance,
        d.quadratic_elongation,
        d.off_center,
        d.volume
    ))
}

pub fn run(a: AnalyzeArgs, fields: BTreeMap<String, f64>) -> CliResult<()> {
    let mut rec = Recorder::new("analyze", a.common.manifest.clone());
    rec.note("kind", name(a.kind));
    let c = match load_config(&a.common) {
        Ok(c) => c,
        Err(e) => return rec.finish(None, Err(e)),
    };
    let result = (|| -> CliResult<()> {
        if a.batch.is_some() && scalar(a.kind).is_none() {
            return Err(Failure::Usage(format!(
                "analyze {} does not take --batch",
                name(a.kind)
            )));
        }
        let text = match (a.kind, scalar(a.kind)) {
            (_, Some(spec)) => {
                c.finish()?;
                let rows = match &a.batch {
                    Some(p) => {
                        no_fields(a.kind, &fields)?;
                        rec.input(p)?;
                        read_batch(p, &spec)?
                    }
                    None => {
                        check_fields(a.kind, &spec, &fields)?;
                        vec![complete(&spec, fields.clone())?]
                    }
                };
                scalar_rows(a.kind, &spec, &rows)?
            }
            (_, None) if !fields.is_empty() => return no_fields(a.kind, &fields),
            (Kind::Elastic, None) => elastic(&a, &c, &mut rec)?,
            (Kind::Sliding, None) => sliding(&a, &mut rec)?,
            (Kind::Distortion, None) => distortion(&a, &mut rec)?,
            (k, None) => unreachable!("{k:?} has a scalar spec"),
        };
        match &a.out {
            Some(p) => std::fs::write(p, &text)?,
            None => print!("{text}"),
        }
        Ok(())
    })();
    rec.finish(Some(&c), result)
}
