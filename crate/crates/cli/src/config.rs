//! Run configuration: a flat `section.key = value unit` text format.
//!
//! Every key is declared in [`KEYS`] with its physical dimension and
//! default. Dimensioned values must carry a unit suffix and are stored in
//! SI; dimensionless ones must not. Sources are layered as
//! defaults, then the file, then `GQSFALL_SECTION_KEY` environment
//! variables, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use gqs_freefall::experiment::{ExperimentConfig, Numerics};
use gqs_freefall::freefall::Prefactor;
use gqs_freefall::inference::{
    CampaignSpec, CountMode, FisherSpec, LikelihoodKind, LikelihoodOptions, ScanSpec,
};
use gqs_freefall::physcore::JOULE_PER_EV;
use gqs_freefall::source::RecoilOrder;
use gqs_freefall::Error;

/// What a key holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Length,
    Time,
    Frequency,
    Energy,
    Velocity,
    Acceleration,
    /// Dimensionless real number.
    Number,
    /// Non-negative integer.
    Count,
    /// Three dimensionless components.
    Vector,
    /// Dimensionless list.
    List,
    /// One of a fixed set of words.
    Choice(&'static [&'static str]),
    Text,
}

impl Kind {
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Kind::Length => &[
                ("m", 1.0),
                ("cm", 1e-2),
                ("mm", 1e-3),
                ("um", 1e-6),
                ("nm", 1e-9),
            ],
            Kind::Time => &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("ns", 1e-9)],
            Kind::Frequency => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6)],
            Kind::Energy => &[
                ("J", 1.0),
                ("eV", JOULE_PER_EV),
                ("meV", 1e-3 * JOULE_PER_EV),
                ("ueV", 1e-6 * JOULE_PER_EV),
                ("neV", 1e-9 * JOULE_PER_EV),
                ("peV", 1e-12 * JOULE_PER_EV),
            ],
            Kind::Velocity => &[("m/s", 1.0), ("cm/s", 1e-2), ("mm/s", 1e-3)],
            Kind::Acceleration => &[("m/s2", 1.0), ("m/s^2", 1.0)],
            _ => &[],
        }
    }

    /// SI unit written in canonical output.
    fn si(self) -> Option<&'static str> {
        self.units().first().map(|u| u.0)
    }
}

/// Parsed value, in SI for dimensioned kinds.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Real(f64),
    Int(u64),
    Reals(Vec<f64>),
    Word(String),
    /// Optional key left unset.
    Unset,
}

pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    /// Accepts `none`.
    pub optional: bool,
    /// Must be strictly positive (dimensioned and dimensionless reals).
    pub positive: bool,
}

const fn k(key: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind,
        default,
        optional: false,
        positive: true,
    }
}

const fn opt(key: &'static str, kind: Kind) -> KeySpec {
    KeySpec {
        key,
        kind,
        default: "none",
        optional: true,
        positive: true,
    }
}

const fn nonneg(key: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind,
        default,
        optional: false,
        positive: false,
    }
}

pub const COMMANDS: &[&str] = &[
    "scales",
    "basis",
    "source-dist",
    "end-of-mirror",
    "current-map",
    "simulate",
    "estimate",
    "fisher",
    "campaign",
];

pub static KEYS: &[KeySpec] = &[
    k("gravity.g0", Kind::Acceleration, "9.81 m/s2"),
    k("trap.f", Kind::Frequency, "20 kHz"),
    k("trap.h", Kind::Length, "10 um"),
    nonneg("photodetach.delta_e", Kind::Energy, "10 ueV"),
    nonneg("photodetach.pol_axis", Kind::Vector, "0 1 0"),
    opt("photodetach.kick", Kind::Velocity),
    k("geometry.d", Kind::Length, "5 cm"),
    k("geometry.height", Kind::Length, "30 cm"),
    opt("geometry.z_max", Kind::Length),
    k("basis.n_max", Kind::Count, "1000"),
    nonneg("atoms.n", Kind::Count, "1000"),
    k("numerics.recoil_panels", Kind::Count, "40"),
    k("numerics.recoil_points", Kind::Count, "4"),
    k("numerics.recoil_azimuth", Kind::Count, "16"),
    k("numerics.prune", Kind::Number, "1e-6"),
    k("numerics.tail", Kind::Number, "1e-6"),
    k("numerics.dt", Kind::Time, "20 us"),
    k("numerics.dtau", Kind::Time, "20 us"),
    k("numerics.coarse", Kind::Count, "200"),
    nonneg("numerics.pad", Kind::Number, "0.02"),
    k(
        "numerics.prefactor",
        Kind::Choice(&["total", "fall"]),
        "total",
    ),
    k("output.source_nv", Kind::Count, "101"),
    k("output.mirror_nv", Kind::Count, "201"),
    k("output.mirror_nt", Kind::Count, "101"),
    k("output.map_y_min", Kind::Length, "250 mm"),
    k("output.map_y_max", Kind::Length, "350 mm"),
    k("output.map_t_min", Kind::Time, "270 ms"),
    k("output.map_t_max", Kind::Time, "320 ms"),
    k("output.map_ny", Kind::Count, "80"),
    k("output.map_nt", Kind::Count, "80"),
    k("output.cut_nt", Kind::Count, "501"),
    k("output.fold_nt", Kind::Count, "200"),
    k("output.fold_ntau", Kind::Count, "200"),
    k("scan.points", Kind::Count, "61"),
    k("scan.half_width", Kind::Number, "3e-5"),
    nonneg("scan.max_widen", Kind::Count, "3"),
    nonneg("scan.reach", Kind::Number, "6"),
    k("scan.fit_drop", Kind::Number, "4.5"),
    k("scan.max_residual", Kind::Number, "0.2"),
    k(
        "likelihood.kind",
        Kind::Choice(&["conditional", "unconditional"]),
        "conditional",
    ),
    k("likelihood.floor", Kind::Number, "1e-12"),
    k("campaign.m", Kind::Count, "200"),
    k(
        "campaign.count",
        Kind::Choice(&["binomial", "expected"]),
        "binomial",
    ),
    k("campaign.bins", Kind::Count, "30"),
    nonneg("campaign.bootstrap", Kind::Count, "1000"),
    nonneg("campaign.keep_scans", Kind::Count, "10"),
    k("fisher.steps", Kind::List, "1e-4 5e-5"),
    k("fisher.order", Kind::Count, "3"),
    k("fisher.floor", Kind::Number, "1e-10"),
    k("run.command", Kind::Choice(COMMANDS), "scales"),
    nonneg("run.seed", Kind::Count, "1"),
    nonneg("run.workers", Kind::Count, "1"),
    k("run.out", Kind::Text, "out"),
    opt("run.events", Kind::Text),
];

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn config_error(line: usize, key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_real(text: &str, line: usize, key: &str) -> Result<f64, Error> {
    let v: f64 = text
        .parse()
        .map_err(|_| config_error(line, key, format!("`{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(config_error(line, key, "value must be finite"));
    }
    Ok(v)
}

/// Parses the right-hand side of `key = ...` for the declared kind.
pub fn parse_value(key: &str, raw: &str, line: usize) -> Result<Value, Error> {
    let spec = spec(key).ok_or_else(|| config_error(line, key, "unknown key"))?;
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(config_error(line, key, "missing value"));
    }
    if raw == "none" {
        return if spec.optional {
            Ok(Value::Unset)
        } else {
            Err(config_error(line, key, "this key cannot be unset"))
        };
    }
    let tokens: Vec<&str> = raw.split_whitespace().collect();
    let value = match spec.kind {
        Kind::Text => Value::Word(raw.to_string()),
        Kind::Choice(options) => {
            if !options.contains(&raw) {
                return Err(config_error(
                    line,
                    key,
                    format!("expected one of {}", options.join(", ")),
                ));
            }
            Value::Word(raw.to_string())
        }
        Kind::Count => {
            if tokens.len() != 1 {
                return Err(config_error(
                    line,
                    key,
                    "expected a single integer without unit",
                ));
            }
            let v = raw.parse::<u64>().map_err(|_| {
                config_error(line, key, format!("`{raw}` is not a non-negative integer"))
            })?;
            if spec.positive && v == 0 {
                return Err(config_error(line, key, "must be >= 1"));
            }
            Value::Int(v)
        }
        Kind::Number => {
            if tokens.len() != 1 {
                return Err(config_error(line, key, "dimensionless value takes no unit"));
            }
            Value::Real(parse_real(raw, line, key)?)
        }
        Kind::Vector | Kind::List => {
            let v = tokens
                .iter()
                .map(|t| parse_real(t, line, key))
                .collect::<Result<Vec<_>, _>>()?;
            if spec.kind == Kind::Vector && v.len() != 3 {
                return Err(config_error(line, key, "expected three components"));
            }
            Value::Reals(v)
        }
        kind => {
            let (num, unit) = match tokens.as_slice() {
                [n, u] => (*n, *u),
                [_] => {
                    return Err(config_error(
                        line,
                        key,
                        format!("missing unit suffix (expected {})", kind.si().unwrap_or("")),
                    ))
                }
                _ => return Err(config_error(line, key, "expected `value unit`")),
            };
            let factor = kind
                .units()
                .iter()
                .find(|u| u.0 == unit)
                .map(|u| u.1)
                .ok_or_else(|| {
                    let names: Vec<&str> = kind.units().iter().map(|u| u.0).collect();
                    config_error(
                        line,
                        key,
                        format!("unit `{unit}` not one of {}", names.join(", ")),
                    )
                })?;
            Value::Real(parse_real(num, line, key)? * factor)
        }
    };
    let reals: Vec<f64> = match &value {
        Value::Real(v) => vec![*v],
        Value::Reals(v) if spec.kind == Kind::List => v.clone(),
        _ => Vec::new(),
    };
    for v in reals {
        if spec.positive && (v.is_nan() || v <= 0.0) {
            return Err(config_error(line, key, format!("must be > 0, got {v}")));
        }
        if !spec.positive && (v.is_nan() || v < 0.0) {
            return Err(config_error(line, key, format!("must be >= 0, got {v}")));
        }
    }
    if let Value::Reals(v) = &value {
        if spec.kind == Kind::Vector && v.iter().all(|c| *c == 0.0) {
            return Err(config_error(line, key, "vector must be non-zero"));
        }
    }
    Ok(value)
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|s| {
                (
                    s.key,
                    parse_value(s.key, s.default, 0).expect("valid default"),
                )
            })
            .collect();
        Self { values }
    }
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_error(line, content, "expected `section.key = value`"))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), line) {
                return Err(config_error(
                    line,
                    key,
                    format!("already set on line {prev}"),
                ));
            }
            self.set(key, value, line)?;
        }
        self.check()
    }

    /// Sets one key from text; `line` is reported in errors.
    pub fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<(), Error> {
        let spec = spec(key).ok_or_else(|| config_error(line, key, "unknown key"))?;
        let value = parse_value(key, raw, line)?;
        self.values.insert(spec.key, value);
        Ok(())
    }

    /// Applies `GQSFALL_SECTION_KEY` variables from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(
        &mut self,
        vars: I,
    ) -> Result<(), Error> {
        let names: BTreeMap<String, &'static str> =
            KEYS.iter().map(|s| (env_name(s.key), s.key)).collect();
        for (name, value) in vars {
            if !name.starts_with("GQSFALL_") {
                continue;
            }
            match names.get(&name) {
                Some(key) => self.set(key, &value, 0)?,
                None => return Err(config_error(0, &name, "unknown environment override")),
            }
        }
        self.check()
    }

    /// Cross-key constraints.
    fn check(&self) -> Result<(), Error> {
        let line = 0;
        if self.real("numerics.tail") >= 1e-2 {
            return Err(config_error(line, "numerics.tail", "must be < 1e-2"));
        }
        if self.count("scan.points") < 5 {
            return Err(config_error(line, "scan.points", "needs at least 5 points"));
        }
        if self.real("output.map_y_max") <= self.real("output.map_y_min") {
            return Err(config_error(
                line,
                "output.map_y_max",
                "must exceed output.map_y_min",
            ));
        }
        if self.real("output.map_t_max") <= self.real("output.map_t_min") {
            return Err(config_error(
                line,
                "output.map_t_max",
                "must exceed output.map_t_min",
            ));
        }
        Ok(())
    }

    pub fn value(&self, key: &str) -> &Value {
        &self.values[key]
    }

    pub fn real(&self, key: &str) -> f64 {
        match self.value(key) {
            Value::Real(v) => *v,
            Value::Int(v) => *v as f64,
            other => panic!("{key} is not a real: {other:?}"),
        }
    }

    pub fn optional_real(&self, key: &str) -> Option<f64> {
        match self.value(key) {
            Value::Unset => None,
            _ => Some(self.real(key)),
        }
    }

    pub fn count(&self, key: &str) -> u64 {
        match self.value(key) {
            Value::Int(v) => *v,
            other => panic!("{key} is not an integer: {other:?}"),
        }
    }

    pub fn reals(&self, key: &str) -> &[f64] {
        match self.value(key) {
            Value::Reals(v) => v,
            other => panic!("{key} is not a list: {other:?}"),
        }
    }

    pub fn word(&self, key: &str) -> Option<&str> {
        match self.value(key) {
            Value::Word(w) => Some(w),
            _ => None,
        }
    }

    pub fn command(&self) -> &str {
        self.word("run.command").unwrap_or("scales")
    }

    pub fn seed(&self) -> u64 {
        self.count("run.seed")
    }

    pub fn workers(&self) -> usize {
        self.count("run.workers") as usize
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.word("run.out").unwrap_or("out"))
    }

    /// Canonical text: every key in order, values in SI with 17 significant
    /// digits. Parsing it back yields the same configuration.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for spec in KEYS {
            let v = &self.values[spec.key];
            let text = match v {
                Value::Unset => "none".to_string(),
                Value::Int(i) => i.to_string(),
                Value::Word(w) => w.clone(),
                Value::Real(x) => match spec.kind.si() {
                    Some(unit) => format!("{} {unit}", fmt_real(*x)),
                    None => fmt_real(*x),
                },
                Value::Reals(xs) => xs
                    .iter()
                    .map(|x| fmt_real(*x))
                    .collect::<Vec<_>>()
                    .join(" "),
            };
            let _ = writeln!(out, "{} = {}", spec.key, text);
        }
        out
    }

    /// SHA-256 of the canonical text, excluding the `run` section, which
    /// only selects what to do with the configuration.
    pub fn hash(&self) -> String {
        let physics: String = self
            .canonical()
            .lines()
            .filter(|l| !l.starts_with("run."))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(physics.as_bytes()))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let pol = self.reals("photodetach.pol_axis");
        ExperimentConfig {
            g0: self.real("gravity.g0"),
            f: self.real("trap.f"),
            h: self.real("trap.h"),
            delta_e: self.real("photodetach.delta_e"),
            pol_axis: [pol[0], pol[1], pol[2]],
            kick: self.optional_real("photodetach.kick"),
            d: self.real("geometry.d"),
            height: self.real("geometry.height"),
            n_max: self.count("basis.n_max") as usize,
            z_max: self.optional_real("geometry.z_max"),
            n_atoms: self.count("atoms.n"),
            numerics: Numerics {
                recoil: RecoilOrder {
                    polar_panels: self.count("numerics.recoil_panels") as usize,
                    polar_points: self.count("numerics.recoil_points") as usize,
                    azimuth: self.count("numerics.recoil_azimuth") as usize,
                },
                prune: self.real("numerics.prune"),
                tail: self.real("numerics.tail"),
                dt: self.real("numerics.dt"),
                dtau: self.real("numerics.dtau"),
                coarse: self.count("numerics.coarse") as usize,
                pad: self.real("numerics.pad"),
                prefactor: match self.word("numerics.prefactor") {
                    Some("fall") => Prefactor::FallTime,
                    _ => Prefactor::TotalTime,
                },
            },
        }
    }

    pub fn scan(&self) -> ScanSpec {
        ScanSpec {
            points: self.count("scan.points") as usize,
            half_width: self.real("scan.half_width"),
            max_widen: self.count("scan.max_widen") as usize,
            fit_drop: self.real("scan.fit_drop"),
            max_residual: self.real("scan.max_residual"),
        }
    }

    pub fn likelihood(&self) -> LikelihoodOptions {
        LikelihoodOptions {
            kind: match self.word("likelihood.kind") {
                Some("unconditional") => LikelihoodKind::Unconditional,
                _ => LikelihoodKind::Conditional,
            },
            floor: self.real("likelihood.floor"),
        }
    }

    pub fn campaign(&self) -> CampaignSpec {
        CampaignSpec {
            draws: self.count("campaign.m") as usize,
            base_seed: self.seed(),
            count: match self.word("campaign.count") {
                Some("expected") => CountMode::Expected,
                _ => CountMode::Binomial,
            },
            scan: self.scan(),
            likelihood: self.likelihood(),
            bins: self.count("campaign.bins") as usize,
            bootstrap: self.count("campaign.bootstrap") as usize,
            keep_scans: self.count("campaign.keep_scans") as usize,
        }
    }

    pub fn fisher(&self) -> FisherSpec {
        FisherSpec {
            steps: self.reals("fisher.steps").to_vec(),
            order: self.count("fisher.order") as usize,
            floor: self.real("fisher.floor"),
        }
    }
}

/// `GQSFALL_SECTION_KEY` for `section.key`.
pub fn env_name(key: &str) -> String {
    format!("GQSFALL_{}", key.replace('.', "_").to_uppercase())
}

/// Seventeen significant digits, enough to read back the same `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}
