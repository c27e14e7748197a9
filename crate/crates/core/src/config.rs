//! `[section]` / `key = value` text configuration.
//!
//! ```text
//! [radar]
//! carrier_hz = 77000000000
//! bandwidth_hz = 561960000
//! pulses = 512
//! samples = 512
//! sample_rate_hz = 561960000
//! frame_period_s = 0.2
//!
//! [targets]
//! target = 50,10,1
//!
//! [clutter]
//! rate = 0
//!
//! [run]
//! frames = 30
//! snr_db = -20
//! seed = 1
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::signal_sim::{ClutterConfig, RadarParams, ScenarioConfig, TargetState};

/// One `key = value` entry with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|e| e.parse()).transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| {
            Error::Config(format!("section [{}] is missing key '{key}'", self.name))
        })
    }
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| Error::ConfigParse {
            line: self.line,
            msg: format!("cannot parse '{}' for key '{}'", self.value, self.key),
        })
    }

    /// Comma-separated list of numbers.
    pub fn list<T: FromStr>(&self) -> Result<Vec<T>> {
        self.value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| Error::ConfigParse {
                    line: self.line,
                    msg: format!("cannot parse '{}' in list '{}'", s.trim(), self.key),
                })
            })
            .collect()
    }

    pub fn pair(&self) -> Result<(f64, f64)> {
        match self.list::<f64>()?.as_slice() {
            &[a, b] => Ok((a, b)),
            _ => Err(Error::ConfigParse {
                line: self.line,
                msg: format!("'{}' expects two comma-separated numbers", self.key),
            }),
        }
    }
}

/// Parsed document: sections in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::ConfigParse {
                    line,
                    msg: format!("unterminated section header '{l}'"),
                })?;
                sections.push(Section {
                    name: name.trim().to_owned(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = l.split_once('=').ok_or_else(|| Error::ConfigParse {
                line,
                msg: format!("expected 'key = value', got '{l}'"),
            })?;
            let section = sections.last_mut().ok_or_else(|| Error::ConfigParse {
                line,
                msg: "entry before any [section] header".into(),
            })?;
            section.entries.push(Entry {
                key: key.trim().to_owned(),
                value: value.trim().to_owned(),
                line,
            });
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
    }
}

fn parse_radar(s: &Section) -> Result<RadarParams> {
    let samples: usize = s.require("samples")?;
    let fs: f64 = s.require("sample_rate_hz")?;
    let p = RadarParams {
        carrier_hz: s.require("carrier_hz")?,
        bandwidth_hz: s.require("bandwidth_hz")?,
        pulse_width_s: s.parse("pulse_width_s")?.unwrap_or(samples as f64 / fs),
        pulses: s.require("pulses")?,
        samples,
        sample_rate_hz: fs,
        frame_period_s: s.parse("frame_period_s")?.unwrap_or(0.2),
    };
    p.validate()?;
    Ok(p)
}

fn parse_targets(s: &Section) -> Result<Vec<TargetState>> {
    s.all("target")
        .map(|e| match e.list::<f64>()?.as_slice() {
            &[r, v, a] => Ok(TargetState::new(r, v, a)),
            _ => Err(Error::ConfigParse {
                line: e.line,
                msg: "target expects range,velocity,amplitude".into(),
            }),
        })
        .collect()
}

fn parse_clutter(s: Option<&Section>) -> Result<ClutterConfig> {
    let mut c = ClutterConfig::default();
    let Some(s) = s else { return Ok(c) };
    if let Some(v) = s.parse("rate")? {
        c.rate = v;
    }
    for (key, slot) in [
        ("range", &mut c.range),
        ("velocity", &mut c.velocity),
        ("clutter_confidence", &mut c.clutter_confidence),
        ("target_confidence", &mut c.target_confidence),
    ] {
        if let Some(e) = s.get(key) {
            *slot = e.pair()?;
        }
    }
    if let Some(v) = s.parse("sigma_range")? {
        c.sigma_range = v;
    }
    if let Some(v) = s.parse("sigma_velocity")? {
        c.sigma_velocity = v;
    }
    if let Some(e) = s.get("feature_noise") {
        c.feature_noise = if e.value == "none" { None } else { Some(e.parse()?) };
    }
    Ok(c)
}

/// Parse scenario text. `[radar]` is mandatory; other sections default.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let doc = Document::parse(text)?;
    let radar = parse_radar(doc.require_section("radar")?)?;
    let targets = match doc.section("targets") {
        Some(s) => parse_targets(s)?,
        None => Vec::new(),
    };
    let clutter = parse_clutter(doc.section("clutter"))?;
    let mut cfg = ScenarioConfig::new(radar);
    cfg.targets = targets;
    cfg.clutter = clutter;
    if let Some(run) = doc.section("run") {
        if let Some(f) = run.parse("frames")? {
            cfg.frames = f;
        }
        if let Some(e) = run.get("snr_db") {
            cfg.snr_db = if e.value == "none" { None } else { Some(e.parse()?) };
        }
        if let Some(seed) = run.parse("seed")? {
            cfg.seed = seed;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Scenario text that [`parse_scenario`] reads back to an equal value.
pub fn format_scenario(cfg: &ScenarioConfig) -> String {
    let r = &cfg.radar;
    let c = &cfg.clutter;
    let mut s = String::new();
    let _ = writeln!(s, "[radar]");
    let _ = writeln!(s, "carrier_hz = {}", r.carrier_hz);
    let _ = writeln!(s, "bandwidth_hz = {}", r.bandwidth_hz);
    let _ = writeln!(s, "pulse_width_s = {}", r.pulse_width_s);
    let _ = writeln!(s, "pulses = {}", r.pulses);
    let _ = writeln!(s, "samples = {}", r.samples);
    let _ = writeln!(s, "sample_rate_hz = {}", r.sample_rate_hz);
    let _ = writeln!(s, "frame_period_s = {}", r.frame_period_s);
    let _ = writeln!(s, "\n[targets]");
    for t in &cfg.targets {
        let _ = writeln!(s, "target = {},{},{}", t.range, t.velocity, t.amplitude);
    }
    let _ = writeln!(s, "\n[clutter]");
    let _ = writeln!(s, "rate = {}", c.rate);
    let _ = writeln!(s, "range = {},{}", c.range.0, c.range.1);
    let _ = writeln!(s, "velocity = {},{}", c.velocity.0, c.velocity.1);
    let _ = writeln!(s, "clutter_confidence = {},{}", c.clutter_confidence.0, c.clutter_confidence.1);
    let _ = writeln!(s, "target_confidence = {},{}", c.target_confidence.0, c.target_confidence.1);
    let _ = writeln!(s, "sigma_range = {}", c.sigma_range);
    let _ = writeln!(s, "sigma_velocity = {}", c.sigma_velocity);
    match c.feature_noise {
        Some(v) => writeln!(s, "feature_noise = {v}"),
        None => writeln!(s, "feature_noise = none"),
    }
    .ok();
    let _ = writeln!(s, "\n[run]");
    let _ = writeln!(s, "frames = {}", cfg.frames);
    match cfg.snr_db {
        Some(v) => writeln!(s, "snr_db = {v}"),
        None => writeln!(s, "snr_db = none"),
    }
    .ok();
    let _ = writeln!(s, "seed = {}", cfg.seed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
[radar]
carrier_hz = 77000000000
bandwidth_hz = 561960000
pulses = 64
samples = 64
sample_rate_hz = 561960000

[targets]
target = 5,10,1
target = 8.5,-3,0.5

[run]
frames = 3
snr_db = -20
seed = 9
";

    #[test]
    fn parses_sample() {
        let cfg = parse_scenario(SAMPLE).unwrap();
        assert_eq!(cfg.targets.len(), 2);
        assert_eq!(cfg.targets[1], TargetState::new(8.5, -3.0, 0.5));
        assert_eq!(cfg.frames, 3);
        assert_eq!(cfg.snr_db, Some(-20.0));
        assert_eq!(cfg.radar.pulses, 64);
    }

    #[test]
    fn format_parse_identity() {
        let mut cfg = parse_scenario(SAMPLE).unwrap();
        cfg.clutter.feature_noise = Some(0.06);
        cfg.clutter.rate = 12.5;
        assert_eq!(parse_scenario(&format_scenario(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn missing_radar_names_section() {
        let err = parse_scenario("[run]\nframes = 2\n").unwrap_err();
        assert!(err.to_string().contains("[radar]"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = SAMPLE.replace("pulses = 64", "pulses = sixty");
        match parse_scenario(&text).unwrap_err() {
            Error::ConfigParse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
        match Document::parse("[radar]\nnonsense\n").unwrap_err() {
            Error::ConfigParse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }
}
