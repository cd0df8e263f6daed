//! Flat `key = value` run configuration.
//!
//! Values come from a file and from command-line overrides (`key=value`);
//! overrides win, and absent keys take built-in defaults. Typed builders read
//! the keys they understand and record every value they resolve, including
//! defaults, so a run can report its effective settings. Keys that no builder
//! consumed are rejected by [`Config::finish`].

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::cyclesim::{self, CycleConfig, RelaxConfig, ScheduleEntry};
use crate::descriptors::AcsfParams;
use crate::elements;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::neighbors::DEFAULT_CUTOFF;
use crate::oracle::PairOracle;
use crate::potential::{ModelSpec, PotentialModel};
use crate::structure::Region;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    File,
    Override,
}

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, (String, Source)>,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<BTreeMap<String, String>>,
}

fn split_pair(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                split_pair(line).ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if c.entries.contains_key(&k) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
            c.entries.insert(k, (v, Source::File));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override on top of file values.
    pub fn set(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair).ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.entries.insert(k, (v, Source::Override));
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.entries.get(key).map(|(_, s)| *s)
    }

    /// Explicitly given keys and values.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }

    /// Every value resolved so far, defaults included.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }

    fn take(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.raw(key)
    }

    fn note(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    /// Value of `key` parsed as `T`, else `default`.
    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + ToString,
    {
        let v = match self.take(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))?,
            None => default,
        };
        self.note(key, v.to_string());
        Ok(v)
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + ToString,
    {
        match self.take(key) {
            Some(s) => {
                let v = s
                    .parse::<T>()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))?;
                self.note(key, v.to_string());
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        let v = match self.take(key) {
            Some(s) => parse_bool(s).ok_or_else(|| Error::Config(format!("{key}: expected a boolean, got {s:?}")))?,
            None => default,
        };
        self.note(key, v.to_string());
        Ok(v)
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr + ToString,
    {
        let v = match self.take(key) {
            Some(s) => s
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.parse::<T>()
                        .map_err(|_| Error::Config(format!("{key}: cannot parse {x:?}")))
                })
                .collect::<Result<Vec<T>>>()?,
            None => default,
        };
        self.note(key, join(&v));
        Ok(v)
    }

    pub fn get_vec3(&self, key: &str) -> Result<Option<Vec3>> {
        match self.take(key) {
            Some(_) => {
                let v: Vec<f64> = self.get_list(key, Vec::new())?;
                let arr: Vec3 = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three components")))?;
                Ok(Some(arr))
            }
            None => Ok(None),
        }
    }

    pub fn get_species(&self, key: &str) -> Result<Option<u8>> {
        match self.take(key) {
            Some(s) => {
                let z = parse_species(s).ok_or_else(|| Error::Config(format!("{key}: unknown element {s:?}")))?;
                self.note(key, elements::symbol(z).unwrap_or("?").to_string());
                Ok(Some(z))
            }
            None => Ok(None),
        }
    }

    /// Keys starting with `prefix`, marked as consumed.
    fn take_prefixed(&self, prefix: &str) -> Vec<(String, String)> {
        let keys: Vec<(String, String)> = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, (v, _))| (k.clone(), v.clone()))
            .collect();
        for (k, _) in &keys {
            self.used.borrow_mut().insert(k.clone());
        }
        keys
    }

    /// Rejects keys no builder consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown configuration keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// Element symbol or atomic number.
pub fn parse_species(s: &str) -> Option<u8> {
    match s.parse::<u8>() {
        Ok(z) => elements::symbol(z).map(|_| z),
        Err(_) => elements::atomic_number(s),
    }
}

fn parse_axis(s: &str) -> Option<usize> {
    match s {
        "x" | "X" | "0" => Some(0),
        "y" | "Y" | "1" => Some(1),
        "z" | "Z" | "2" => Some(2),
        _ => None,
    }
}

/// Model layout from `model.*` and `elec.*`. `species` lists elements seen in
/// the data and is used when `model.elements` is absent.
pub fn model_spec(c: &Config, species: &[u8]) -> Result<ModelSpec> {
    let cutoff = c.get("model.cutoff", DEFAULT_CUTOFF)?;
    let descriptors: String = c.get("model.descriptors", "full".to_string())?;
    let acsf = match descriptors.as_str() {
        "full" => AcsfParams::default_grid(cutoff),
        "radial" => AcsfParams::radial_grid(cutoff),
        other => {
            return Err(Error::Config(format!(
                "model.descriptors: expected full or radial, got {other:?}"
            )))
        }
    };
    let mut acsf = acsf;
    acsf.element_resolved = c.get_bool("model.element_resolved", false)?;
    let hidden = c.get_list("model.hidden", vec![24usize, 24])?;
    let names = c.get_list::<String>(
        "model.elements",
        species
            .iter()
            .filter_map(|&z| elements::symbol(z))
            .map(String::from)
            .collect(),
    )?;
    let elements = names
        .iter()
        .map(|s| parse_species(s).ok_or_else(|| Error::Config(format!("model.elements: unknown element {s:?}"))))
        .collect::<Result<Vec<u8>>>()?;
    if elements.is_empty() {
        return Err(Error::Config("model.elements is empty".into()));
    }
    let use_electrostatics = c.get_bool("elec.enable", false)?;
    let use_charge_input = Some(c.get_bool("elec.charge_input", use_electrostatics)?);
    let elec_cutoff = c.get_opt("elec.cutoff")?;
    let seed = c.get("model.seed", 0u64)?;
    let spec = ModelSpec {
        acsf,
        hidden,
        elements,
        use_electrostatics,
        use_charge_input,
        elec_cutoff,
        seed,
    };
    spec.acsf.validate()?;
    Ok(spec)
}

/// Applies `elec.alpha.<symbol>` and `elec.hardness.<symbol>` to `m`.
pub fn apply_element_overrides(c: &Config, m: &mut PotentialModel) -> Result<()> {
    for (field, prefix) in [(0, "elec.alpha."), (1, "elec.hardness.")] {
        for (key, value) in c.take_prefixed(prefix) {
            let sym = &key[prefix.len()..];
            let z = parse_species(sym).ok_or_else(|| Error::Config(format!("{key}: unknown element {sym:?}")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{key} must be positive")));
            }
            let e = m
                .element_mut(z)
                .ok_or_else(|| Error::Config(format!("{key}: element {sym} is not in the model")))?;
            if field == 0 {
                e.alpha = v;
            } else {
                e.hardness = v;
            }
            c.note(&key, v.to_string());
        }
    }
    m.validate()
}

pub fn train_config(c: &Config) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        w_e: c.get("loss.w_e", d.w_e)?,
        w_f: c.get("loss.w_f", d.w_f)?,
        w_q: c.get("loss.w_q", d.w_q)?,
        lr: c.get("opt.lr", d.lr)?,
        momentum: c.get("opt.momentum", d.momentum)?,
        lr_growth: c.get("opt.lr_growth", d.lr_growth)?,
        epochs: c.get("opt.epochs", d.epochs)?,
        charge_epochs: c.get("opt.charge_epochs", d.charge_epochs)?,
        batch_size: c.get("opt.batch_size", d.batch_size)?,
        val_fraction: c.get("data.val_fraction", d.val_fraction)?,
        seed: c.get("opt.seed", d.seed)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn oracle(c: &Config) -> Result<PairOracle> {
    let d = PairOracle::default();
    PairOracle::new(
        c.get("oracle.epsilon", d.epsilon)?,
        c.get("oracle.sigma", d.sigma)?,
        c.get("oracle.cutoff", d.cutoff)?,
    )
}

pub fn relax_config(c: &Config) -> Result<RelaxConfig> {
    let d = RelaxConfig::default();
    let r = RelaxConfig {
        max_steps: c.get("relax.max_steps", d.max_steps)?,
        tol: c.get("relax.tol", d.tol)?,
        step_cap: c.get("relax.step_cap", d.step_cap)?,
    };
    r.validate()?;
    Ok(r)
}

/// Cycling settings and schedule from `cycle.*` and `relax.*`.
pub fn cycle_config(c: &Config) -> Result<(CycleConfig, Vec<ScheduleEntry>)> {
    let species = c
        .get_species("cycle.species")?
        .ok_or_else(|| Error::Config("cycle.species is required".into()))?;
    let axis_name: String = c.get("cycle.axis", "z".to_string())?;
    let axis = parse_axis(&axis_name)
        .ok_or_else(|| Error::Config(format!("cycle.axis: expected x, y or z, got {axis_name:?}")))?;
    let lo = c
        .get_opt::<f64>("cycle.region_min")?
        .ok_or_else(|| Error::Config("cycle.region_min is required".into()))?;
    let hi = c
        .get_opt::<f64>("cycle.region_max")?
        .ok_or_else(|| Error::Config("cycle.region_max is required".into()))?;
    let mut region = Region::slab(axis, lo, hi)?;
    if let Some(v) = c.get_opt::<f64>("cycle.region_volume")? {
        region = region.with_volume(v);
    }
    let mut cfg = CycleConfig::new(species, region);
    let stress = (
        c.get_opt::<f64>("cycle.stress_min")?,
        c.get_opt::<f64>("cycle.stress_max")?,
    );
    cfg.stress_region = match stress {
        (Some(a), Some(b)) => Some(Region::slab(axis, a, b)?),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "cycle.stress_min and cycle.stress_max go together".into(),
            ))
        }
    };
    cfg.atoms_per_step = c.get("cycle.atoms_per_step", cfg.atoms_per_step)?;
    cfg.bias = c.get("cycle.bias", cfg.bias)?;
    cfg.bias_direction = c.get_vec3("cycle.bias_direction")?;
    cfg.x_max = c.get("cycle.x_max", cfg.x_max)?;
    cfg.min_separation = c.get("cycle.min_separation", cfg.min_separation)?;
    cfg.max_attempts = c.get("cycle.max_attempts", cfg.max_attempts)?;
    cfg.seed = c.get("cycle.seed", cfg.seed)?;
    cfg.relax = relax_config(c)?;
    let text: String = c.get("cycle.schedule", "charge:1".to_string())?;
    let schedule = cyclesim::parse_schedule(&text)?;
    cfg.validate()?;
    Ok((cfg, schedule))
}

pub fn elastic_delta(c: &Config) -> Result<f64> {
    c.get("elastic.delta", 1e-3)
}
