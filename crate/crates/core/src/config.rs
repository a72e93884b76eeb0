//! Run configuration files.
//!
//! Configuration is TOML with five optional sections. Every key is optional;
//! missing ones keep the value of the preset named in `run.preset`, or the
//! built-in defaults (dt = 1e-4, open chain, log-spaced grid).
//!
//! ```toml
//! [model]
//! gamma = 10.0
//! sites = 1000
//! dt = 1e-4
//! boundary = "open"      # or "periodic"
//! seed = 1
//! t_max = 10.0
//!
//! [initial]
//! kind = "gaussian"      # gaussian | delta | uniform
//! variance = 4.0
//! center = 0
//!
//! [run]
//! preset = "fig1-gamma10"
//! unravelling = "wnp"    # wnp | qsd | qsd-wide | jump | jump-event
//! noise = "complex"      # complex | real
//! trajectories = 2000
//! out = "result.csv"
//! records = "trajectories.csv"
//!
//! [grid]
//! kind = "log"           # log | linear
//! t_min = 0.01
//! points_per_decade = 40
//!
//! [compare]
//! checkpoints = [0.5, 1.0, 2.0]
//! unravellings = ["wnp", "qsd", "qsd:real", "jump", "jump-event"]
//! oracle_gamma = 4.0
//! z_threshold = 4.0
//! ```

use std::path::{Path, PathBuf};

use crate::ensemble::{CompareSpec, RunSpec};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, InitialState, ModelParams};
use crate::observables::GridSpec;
use crate::presets::{self, PresetSpec};
use crate::unravelling::{NoiseVariant, UnravellingKind};

const SECTIONS: [(&str, &[&str]); 5] = [
    ("model", &["gamma", "sites", "dt", "boundary", "seed", "t_max"]),
    ("initial", &["kind", "variance", "center", "site"]),
    ("run", &["preset", "unravelling", "noise", "trajectories", "out", "records"]),
    ("grid", &["kind", "t_min", "points_per_decade", "points"]),
    ("compare", &["checkpoints", "trajectories", "unravellings", "oracle_gamma", "z_threshold"]),
];

/// Settings that may come from a preset, a file or the command line. Later
/// layers win field by field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub gamma: Option<f64>,
    pub sites: Option<usize>,
    pub dt: Option<f64>,
    pub boundary: Option<Boundary>,
    pub seed: Option<u64>,
    pub t_max: Option<f64>,
    pub initial: Option<InitialState>,
    pub unravelling: Option<String>,
    pub noise: Option<NoiseVariant>,
    pub trajectories: Option<u64>,
    pub out: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub grid: Option<GridSpec>,
    pub checkpoints: Option<Vec<f64>>,
    pub compare_trajectories: Option<u64>,
    pub unravellings: Option<Vec<UnravellingKind>>,
    pub oracle_gamma: Option<f64>,
    pub z_threshold: Option<f64>,
}

macro_rules! layer {
    ($base:ident, $top:ident; $($f:ident),*) => {
        Overrides { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Overrides {
    /// `self` overlaid by `top`.
    pub fn then(self, top: Overrides) -> Overrides {
        let base = self;
        layer!(base, top; preset, gamma, sites, dt, boundary, seed, t_max, initial, unravelling,
               noise, trajectories, out, records, grid, checkpoints, compare_trajectories,
               unravellings, oracle_gamma, z_threshold)
    }

    fn apply_params(&self, p: &mut ModelParams) {
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.sites {
            p.n_sites = v;
        }
        if let Some(v) = self.dt {
            p.dt = v;
        }
        if let Some(v) = self.boundary {
            p.boundary = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.t_max {
            p.t_max = v;
        }
    }

    /// Builds the run: preset (or defaults) first, then these settings.
    pub fn run_spec(&self) -> Result<RunSpec> {
        let mut spec = match &self.preset {
            Some(name) => match lookup_preset(name)?.spec {
                PresetSpec::Run(r) => r,
                PresetSpec::Compare(_) => {
                    return Err(Error::Config(format!("preset `{name}` is a comparison; use `compare`")))
                }
            },
            None => default_run_spec(),
        };
        self.apply_params(&mut spec.params);
        if let Some(v) = self.initial {
            spec.initial = v;
        }
        if self.unravelling.is_some() || self.noise.is_some() {
            let tag = self.unravelling.as_deref().unwrap_or(spec.unravelling.tag());
            let noise = self.noise.unwrap_or(spec.unravelling.noise_variant());
            spec.unravelling = UnravellingKind::parse(tag, noise)?;
        }
        if let Some(v) = self.trajectories {
            spec.n_trajectories = v;
        }
        if let Some(v) = &self.grid {
            spec.grid = v.clone();
        }
        spec.output = self.out.clone();
        spec.keep_records = self.records.is_some();
        spec.validate()?;
        Ok(spec)
    }

    pub fn compare_spec(&self) -> Result<CompareSpec> {
        let mut spec = match &self.preset {
            Some(name) => match lookup_preset(name)?.spec {
                PresetSpec::Compare(c) => c,
                PresetSpec::Run(_) => {
                    return Err(Error::Config(format!("preset `{name}` is an ensemble run; use `run`")))
                }
            },
            None => CompareSpec::default(),
        };
        self.apply_params(&mut spec.params);
        if let Some(v) = self.initial {
            spec.initial = v;
        }
        if let Some(v) = &self.checkpoints {
            spec.checkpoints = v.clone();
        }
        if let Some(v) = self.compare_trajectories.or(self.trajectories) {
            spec.n_trajectories = v;
        }
        if let Some(v) = &self.unravellings {
            spec.unravellings = v.clone();
        } else if let Some(tag) = &self.unravelling {
            spec.unravellings = vec![UnravellingKind::parse(tag, self.noise.unwrap_or_default())?];
        }
        if let Some(v) = self.oracle_gamma {
            spec.oracle_gamma = Some(v);
        }
        if let Some(v) = self.z_threshold {
            spec.z_threshold = v;
        }
        spec.params.validate()?;
        Ok(spec)
    }
}

fn default_run_spec() -> RunSpec {
    RunSpec::new(ModelParams::default(), UnravellingKind::Wnp, InitialState::gaussian(4.0), 1000)
}

fn lookup_preset(name: &str) -> Result<presets::Preset> {
    presets::find(name).ok_or_else(|| {
        let names = presets::names();
        let hint = suggest(name, names.iter().map(String::as_str))
            .map(|s| format!("; did you mean `{s}`?"))
            .unwrap_or_default();
        Error::Config(format!("unknown preset `{name}`{hint} (see `presets`)"))
    })
}

/// Closest candidate within edit distance 2.
pub fn suggest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, _)| *d <= 2)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

/// 1-based line of `key` inside `[section]` (or at top level).
fn line_of(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = Some(name.trim().to_string());
            continue;
        }
        let Some((k, _)) = t.split_once('=') else { continue };
        if k.trim().trim_matches('"') == key && current.as_deref() == section {
            return Some(i + 1);
        }
    }
    None
}

fn at_line(text: &str, section: Option<&str>, key: &str) -> String {
    line_of(text, section, key).map(|l| format!("line {l}: ")).unwrap_or_default()
}

fn unknown(text: &str, section: Option<&str>, key: &str, allowed: &[&str]) -> Error {
    let hint = suggest(key, allowed.iter().copied())
        .map(|s| format!("; did you mean `{s}`?"))
        .unwrap_or_default();
    let place = match section {
        Some(s) => format!("key `{key}` in [{s}]"),
        None => format!("section or key `{key}`"),
    };
    Error::Config(format!("{}unknown {place}{hint}", at_line(text, section, key)))
}

struct Section<'a> {
    text: &'a str,
    name: &'static str,
    table: &'a toml::Table,
}

impl Section<'_> {
    fn bad(&self, key: &str, expected: &str) -> Error {
        Error::Config(format!(
            "{}[{}] {key} must be {expected}",
            at_line(self.text, Some(self.name), key),
            self.name
        ))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(v)) => Ok(Some(*v)),
            Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(self.bad(key, "a number")),
        }
    }

    fn int(&self, key: &str) -> Result<Option<i64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(v)) => Ok(Some(*v)),
            Some(_) => Err(self.bad(key, "an integer")),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.int(key)? {
            None => Ok(None),
            Some(v) if v >= 0 => Ok(Some(v as u64)),
            Some(_) => Err(self.bad(key, "a non-negative integer")),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn wrap<T>(&self, key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| {
            let msg = match e {
                Error::Config(m) => m,
                other => other.to_string(),
            };
            Error::Config(format!("{}[{}] {key}: {msg}", at_line(self.text, Some(self.name), key), self.name))
        })
    }
}

/// Parses `tag` or `tag:noise`.
pub fn parse_kind(spec: &str) -> Result<UnravellingKind> {
    let (tag, noise) = match spec.split_once(':') {
        Some((t, n)) => (t, n.parse()?),
        None => (spec, NoiseVariant::Complex),
    };
    UnravellingKind::parse(tag, noise)
}

/// Parses configuration text into overrides.
pub fn parse_config(text: &str) -> Result<Overrides> {
    let root: toml::Table = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| format!("line {}: ", text[..s.start.min(text.len())].lines().count().max(1)))
            .unwrap_or_default();
        Error::Config(format!("{line}{}", e.message()))
    })?;
    let names: Vec<&str> = SECTIONS.iter().map(|(s, _)| *s).collect();
    for (key, value) in &root {
        let Some((_, allowed)) = SECTIONS.iter().find(|(s, _)| s == key) else {
            let err = unknown(text, None, key, &names);
            // A section-level typo such as `[modle]` sits on a header line.
            return Err(match line_of_header(text, key) {
                Some(l) => Error::Config(format!("line {l}: {}", strip_line(&err))),
                None => err,
            });
        };
        let toml::Value::Table(t) = value else {
            return Err(Error::Config(format!("{}`{key}` must be a section", at_line(text, None, key))));
        };
        let section = SECTIONS.iter().find(|(s, _)| s == key).unwrap().0;
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(unknown(text, Some(section), k, allowed));
            }
        }
    }

    let empty = toml::Table::new();
    let sec = |name: &'static str| Section {
        text,
        name,
        table: root.get(name).and_then(|v| v.as_table()).unwrap_or(&empty),
    };
    let mut o = Overrides::default();

    let model = sec("model");
    o.gamma = model.f64("gamma")?;
    o.sites = model.uint("sites")?.map(|v| v as usize);
    o.dt = model.f64("dt")?;
    o.boundary = match model.str("boundary")? {
        Some(s) => Some(model.wrap("boundary", s.parse())?),
        None => None,
    };
    o.seed = model.uint("seed")?;
    o.t_max = model.f64("t_max")?;

    let init = sec("initial");
    if !init.table.is_empty() {
        o.initial = Some(parse_initial(&init)?);
    }

    let run = sec("run");
    o.preset = run.str("preset")?.map(str::to_string);
    if let Some(p) = &o.preset {
        run.wrap("preset", lookup_preset(p))?;
    }
    o.unravelling = run.str("unravelling")?.map(str::to_string);
    if let Some(tag) = &o.unravelling {
        if !UnravellingKind::TAGS.contains(&tag.as_str()) {
            run.wrap("unravelling", UnravellingKind::parse(tag, NoiseVariant::Complex))?;
        }
    }
    o.noise = match run.str("noise")? {
        Some(s) => Some(run.wrap("noise", s.parse())?),
        None => None,
    };
    o.trajectories = run.uint("trajectories")?;
    o.out = run.str("out")?.map(PathBuf::from);
    o.records = run.str("records")?.map(PathBuf::from);

    let grid = sec("grid");
    if !grid.table.is_empty() {
        o.grid = Some(parse_grid(&grid)?);
    }

    let cmp = sec("compare");
    if let Some(v) = cmp.table.get("checkpoints") {
        let list = v.as_array().ok_or_else(|| cmp.bad("checkpoints", "an array of times"))?;
        let times = list
            .iter()
            .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| cmp.bad("checkpoints", "an array of times"))?;
        o.checkpoints = Some(times);
    }
    o.compare_trajectories = cmp.uint("trajectories")?;
    if let Some(v) = cmp.table.get("unravellings") {
        let list = v.as_array().ok_or_else(|| cmp.bad("unravellings", "an array of strings"))?;
        let mut kinds = Vec::new();
        for item in list {
            let s = item.as_str().ok_or_else(|| cmp.bad("unravellings", "an array of strings"))?;
            kinds.push(cmp.wrap("unravellings", parse_kind(s))?);
        }
        o.unravellings = Some(kinds);
    }
    o.oracle_gamma = cmp.f64("oracle_gamma")?;
    o.z_threshold = cmp.f64("z_threshold")?;
    Ok(o)
}

fn line_of_header(text: &str, name: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim().strip_prefix('[').and_then(|r| r.split(']').next()).map(str::trim) == Some(name))
        .map(|i| i + 1)
}

fn strip_line(err: &Error) -> String {
    let Error::Config(m) = err else { return err.to_string() };
    m.clone()
}

fn parse_initial(s: &Section<'_>) -> Result<InitialState> {
    let kind = s.str("kind")?.unwrap_or("gaussian");
    let allowed: &[&str] = match kind {
        "gaussian" => &["kind", "variance", "center"],
        "delta" => &["kind", "site"],
        "uniform" => &["kind"],
        other => {
            let hint = suggest(other, ["gaussian", "delta", "uniform"])
                .map(|h| format!("; did you mean `{h}`?"))
                .unwrap_or_default();
            return Err(Error::Config(format!(
                "{}unknown initial state `{other}`{hint}",
                at_line(s.text, Some("initial"), "kind")
            )));
        }
    };
    for k in s.table.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "{}[initial] `{k}` does not apply to kind `{kind}`",
                at_line(s.text, Some("initial"), k)
            )));
        }
    }
    Ok(match kind {
        "gaussian" => InitialState::GaussianPacket {
            variance: s.f64("variance")?.unwrap_or(4.0),
            center: s.int("center")?.unwrap_or(0),
        },
        "delta" => InitialState::DeltaSite { site: s.int("site")?.unwrap_or(0) },
        _ => InitialState::Uniform,
    })
}

fn parse_grid(s: &Section<'_>) -> Result<GridSpec> {
    match s.str("kind")?.unwrap_or("log") {
        "log" => {
            if s.table.contains_key("points") {
                return Err(Error::Config(format!(
                    "{}[grid] `points` applies to linear grids",
                    at_line(s.text, Some("grid"), "points")
                )));
            }
            let GridSpec::Log { t_min, points_per_decade } = GridSpec::default() else { unreachable!() };
            Ok(GridSpec::Log {
                t_min: s.f64("t_min")?.unwrap_or(t_min),
                points_per_decade: s.uint("points_per_decade")?.map_or(points_per_decade, |v| v as usize),
            })
        }
        "linear" => {
            for k in ["t_min", "points_per_decade"] {
                if s.table.contains_key(k) {
                    return Err(Error::Config(format!(
                        "{}[grid] `{k}` applies to log grids",
                        at_line(s.text, Some("grid"), k)
                    )));
                }
            }
            Ok(GridSpec::Linear { points: s.uint("points")?.map_or(200, |v| v as usize) })
        }
        other => Err(Error::Config(format!(
            "{}[grid] kind must be `log` or `linear`, got `{other}`",
            at_line(s.text, Some("grid"), "kind")
        ))),
    }
}

pub fn load_config(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
