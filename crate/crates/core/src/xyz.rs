//! Extended-XYZ reading and writing.
//!
//! Frame layout: atom count, a comment line of `key=value` pairs
//! (`Lattice`, `Properties`, `pbc`, `energy`, `total_charge`), then one line
//! per atom. Recognised per-atom properties are `species:S:1`, `pos:R:3`,
//! `vel:R:3`, `forces:R:3` and `charge:R:1`; other columns are skipped.

use std::fmt::Write as _;
use std::path::Path;

use crate::elements;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3, ZERO33};
use crate::structure::Structure;

/// One extended-XYZ record: a structure plus optional per-frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub structure: Structure,
    pub energy: Option<f64>,
    pub forces: Option<Vec<Vec3>>,
    pub charges: Option<Vec<f64>>,
}

impl Frame {
    pub fn new(structure: Structure) -> Self {
        Frame {
            structure,
            energy: None,
            forces: None,
            charges: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Species,
    Position,
    Velocity,
    Force,
    Charge,
    Skip(usize),
}

impl Column {
    fn width(self) -> usize {
        match self {
            Column::Species | Column::Charge => 1,
            Column::Position | Column::Velocity | Column::Force => 3,
            Column::Skip(n) => n,
        }
    }
}

/// Splits the comment line into `key=value` pairs, honouring double quotes.
fn split_header(line: &str, lineno: usize) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut chars = line.trim().chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            // bare flag, treated as boolean true
            pairs.push((key, "T".to_string()));
            continue;
        }
        chars.next();
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            let mut closed = false;
            for c in chars.by_ref() {
                if c == '"' {
                    closed = true;
                    break;
                }
                value.push(c);
            }
            if !closed {
                return Err(Error::parse(lineno, format!("unterminated quote in value of '{key}'")));
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn parse_f64(tok: &str, lineno: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(lineno, format!("invalid {what} '{tok}'")))
}

fn parse_bool(tok: &str, lineno: usize) -> Result<bool> {
    match tok {
        "T" | "t" | "True" | "true" | "1" => Ok(true),
        "F" | "f" | "False" | "false" | "0" => Ok(false),
        _ => Err(Error::parse(lineno, format!("invalid boolean '{tok}'"))),
    }
}

fn parse_properties(spec: &str, lineno: usize) -> Result<Vec<Column>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !parts.len().is_multiple_of(3) {
        return Err(Error::parse(lineno, format!("malformed Properties '{spec}'")));
    }
    let mut cols = Vec::new();
    for chunk in parts.chunks(3) {
        let count: usize = chunk[2]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid column count in Properties '{spec}'")))?;
        let col = match (chunk[0], chunk[1], count) {
            ("species", "S", 1) => Column::Species,
            ("pos", "R", 3) => Column::Position,
            ("vel" | "velo", "R", 3) => Column::Velocity,
            ("forces", "R", 3) => Column::Force,
            ("charge" | "charges", "R", 1) => Column::Charge,
            (_, "S" | "R" | "I" | "L", n) => Column::Skip(n),
            _ => {
                return Err(Error::parse(
                    lineno,
                    format!("unsupported property '{}'", chunk.join(":")),
                ))
            }
        };
        cols.push(col);
    }
    if !cols.contains(&Column::Species) || !cols.contains(&Column::Position) {
        return Err(Error::parse(lineno, "Properties must include species:S:1 and pos:R:3"));
    }
    Ok(cols)
}

fn parse_species(tok: &str, lineno: usize) -> Result<u8> {
    if let Ok(z) = tok.parse::<u8>() {
        if elements::symbol(z).is_some() {
            return Ok(z);
        }
    }
    elements::atomic_number(tok).ok_or_else(|| Error::parse(lineno, format!("unknown element '{tok}'")))
}

/// Parses one frame starting at `lines[start]`; returns the frame and the
/// index of the first line after it.
fn parse_frame_at(lines: &[&str], start: usize) -> Result<(Frame, usize)> {
    let count_line = start + 1;
    let n: usize = lines[start].trim().parse().map_err(|_| {
        Error::parse(
            count_line,
            format!("expected atom count, found '{}'", lines[start].trim()),
        )
    })?;
    if n == 0 {
        return Err(Error::parse(count_line, "frame has zero atoms"));
    }
    let header_idx = start + 1;
    let header = lines
        .get(header_idx)
        .ok_or_else(|| Error::parse(header_idx + 1, "missing comment line"))?;
    let header_lineno = header_idx + 1;

    let mut cell: Option<Mat3> = None;
    let mut pbc: Option<[bool; 3]> = None;
    let mut columns = vec![Column::Species, Column::Position];
    let mut energy = None;
    let mut total_charge = 0.0;
    for (key, value) in split_header(header, header_lineno)? {
        match key.to_ascii_lowercase().as_str() {
            "lattice" => {
                let v: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| parse_f64(t, header_lineno, "lattice entry"))
                    .collect::<Result<_>>()?;
                if v.len() != 9 {
                    return Err(Error::parse(header_lineno, "Lattice needs 9 numbers"));
                }
                cell = Some([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]);
            }
            "properties" => columns = parse_properties(&value, header_lineno)?,
            "pbc" => {
                let v: Vec<bool> = value
                    .split_whitespace()
                    .map(|t| parse_bool(t, header_lineno))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(Error::parse(header_lineno, "pbc needs 3 flags"));
                }
                pbc = Some([v[0], v[1], v[2]]);
            }
            "energy" => energy = Some(parse_f64(&value, header_lineno, "energy")?),
            "total_charge" => total_charge = parse_f64(&value, header_lineno, "total_charge")?,
            _ => {}
        }
    }
    let periodic = pbc.unwrap_or(if cell.is_some() { [true; 3] } else { [false; 3] });
    if cell.is_none() && periodic.iter().any(|&p| p) {
        return Err(Error::parse(header_lineno, "pbc set but no Lattice given"));
    }

    let width: usize = columns.iter().map(|c| c.width()).sum();
    let has = |c: Column| columns.contains(&c);
    let mut positions = Vec::with_capacity(n);
    let mut species = Vec::with_capacity(n);
    let mut velocities = has(Column::Velocity).then(|| Vec::with_capacity(n));
    let mut forces = has(Column::Force).then(|| Vec::with_capacity(n));
    let mut charges = has(Column::Charge).then(|| Vec::with_capacity(n));
    for a in 0..n {
        let idx = header_idx + 1 + a;
        let lineno = idx + 1;
        let line = lines
            .get(idx)
            .ok_or_else(|| Error::parse(lineno, format!("expected {n} atom lines, found {a}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != width {
            return Err(Error::parse(
                lineno,
                format!("expected {width} columns, found {}", toks.len()),
            ));
        }
        let mut t = 0;
        for &col in &columns {
            let vec3 = |t: usize, what: &str| -> Result<Vec3> {
                Ok([
                    parse_f64(toks[t], lineno, what)?,
                    parse_f64(toks[t + 1], lineno, what)?,
                    parse_f64(toks[t + 2], lineno, what)?,
                ])
            };
            match col {
                Column::Species => species.push(parse_species(toks[t], lineno)?),
                Column::Position => positions.push(vec3(t, "position")?),
                Column::Velocity => velocities.as_mut().unwrap().push(vec3(t, "velocity")?),
                Column::Force => forces.as_mut().unwrap().push(vec3(t, "force")?),
                Column::Charge => charges.as_mut().unwrap().push(parse_f64(toks[t], lineno, "charge")?),
                Column::Skip(_) => {}
            }
            t += col.width();
        }
    }

    let mut structure = Structure::new(cell.unwrap_or(ZERO33), periodic, positions, species)
        .map_err(|e| Error::parse(header_lineno, e.to_string()))?;
    structure.velocities = velocities;
    structure.total_charge = total_charge;
    let frame = Frame {
        structure,
        energy,
        forces,
        charges,
    };
    Ok((frame, header_idx + 1 + n))
}

/// Parses every frame in a (possibly multi-frame) extended-XYZ text.
pub fn parse_frames(text: &str) -> Result<Vec<Frame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let (frame, next) = parse_frame_at(&lines, i)?;
        frames.push(frame);
        i = next;
    }
    Ok(frames)
}

/// Parses a single-frame extended-XYZ record into a structure.
pub fn parse_structure(text: &str) -> Result<Structure> {
    let mut frames = parse_frames(text)?;
    match frames.len() {
        1 => Ok(frames.remove(0).structure),
        0 => Err(Error::parse(1, "no frame found")),
        n => Err(Error::parse(1, format!("expected one frame, found {n}"))),
    }
}

pub fn read_frames(path: &Path) -> Result<Vec<Frame>> {
    parse_frames(&std::fs::read_to_string(path)?)
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// Formats a frame as extended-XYZ with 12 digits after the decimal point.
pub fn write_frame(frame: &Frame) -> String {
    let s = &frame.structure;
    let mut out = String::new();
    let _ = writeln!(out, "{}", s.len());
    let mut props = String::from("species:S:1:pos:R:3");
    if s.velocities.is_some() {
        props.push_str(":vel:R:3");
    }
    if frame.forces.is_some() {
        props.push_str(":forces:R:3");
    }
    if frame.charges.is_some() {
        props.push_str(":charge:R:1");
    }
    let mut header = Vec::new();
    if s.has_cell() || s.is_periodic() {
        let lat: Vec<String> = s.cell.iter().flatten().map(|&x| num(x)).collect();
        header.push(format!("Lattice=\"{}\"", lat.join(" ")));
    }
    header.push(format!("Properties={props}"));
    let flag = |p: bool| if p { "T" } else { "F" };
    header.push(format!(
        "pbc=\"{} {} {}\"",
        flag(s.periodic[0]),
        flag(s.periodic[1]),
        flag(s.periodic[2])
    ));
    if let Some(e) = frame.energy {
        header.push(format!("energy={}", num(e)));
    }
    header.push(format!("total_charge={}", num(s.total_charge)));
    let _ = writeln!(out, "{}", header.join(" "));
    for i in 0..s.len() {
        let mut cols = vec![elements::symbol(s.species[i]).unwrap_or("X").to_string()];
        cols.extend(s.positions[i].iter().map(|&x| num(x)));
        if let Some(v) = &s.velocities {
            cols.extend(v[i].iter().map(|&x| num(x)));
        }
        if let Some(f) = &frame.forces {
            cols.extend(f[i].iter().map(|&x| num(x)));
        }
        if let Some(q) = &frame.charges {
            cols.push(num(q[i]));
        }
        let _ = writeln!(out, "{}", cols.join(" "));
    }
    out
}

pub fn write_structure(s: &Structure) -> String {
    write_frame(&Frame::new(s.clone()))
}

pub fn write_frames(frames: &[Frame]) -> String {
    frames.iter().map(write_frame).collect()
}
