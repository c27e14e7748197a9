//! Batch run description for `e2e`.
//!
//! ```text
//! [run]
//! scenario = scenario.ini
//! detector = cfar
//! fixed_r = false
//! position_only = false
//! seeds = 1,2,3
//! out = results
//! snr_sweep = -30,-25,-20
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rdtrack::config::Document;
use rdtrack::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Cfar,
    MonteCarlo,
    Neural,
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cfar" => Ok(Self::Cfar),
            "montecarlo" => Ok(Self::MonteCarlo),
            "neural" => Ok(Self::Neural),
            _ => Err(format!("unknown detector '{s}' (expected cfar, montecarlo or neural)")),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cfar => "cfar",
            Self::MonteCarlo => "montecarlo",
            Self::Neural => "neural",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub detector: DetectorKind,
    pub fixed_r: bool,
    pub position_only: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// SNR values for the Pd-vs-SNR sweep; empty skips it.
    pub snr_sweep: Vec<f64>,
    /// Neural detector weights.
    pub weights: Option<PathBuf>,
    pub conf_threshold: f64,
}

fn flag(doc_value: Option<&str>, line: usize) -> Result<bool> {
    match doc_value {
        None => Ok(false),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(v) => Err(Error::ConfigParse {
            line,
            msg: format!("expected true or false, got '{v}'"),
        }),
    }
}

impl RunManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let doc = Document::parse(text)?;
        let run = doc.require_section("run")?;
        let path = |key: &str| run.get(key).map(|e| base.join(&e.value));
        let scenario = path("scenario").ok_or_else(|| Error::Config("[run] is missing 'scenario'".into()))?;
        let detector = match run.get("detector") {
            Some(e) => e.value.parse().map_err(|msg| Error::ConfigParse { line: e.line, msg })?,
            None => DetectorKind::Cfar,
        };
        let bool_of = |key: &str| {
            let e = run.get(key);
            flag(e.map(|e| e.value.as_str()), e.map_or(0, |e| e.line))
        };
        let seeds = match run.get("seeds") {
            Some(e) => e.list()?,
            None => vec![0],
        };
        let m = Self {
            scenario,
            detector,
            fixed_r: bool_of("fixed_r")?,
            position_only: bool_of("position_only")?,
            seeds,
            out: path("out").unwrap_or_else(|| base.join("results")),
            snr_sweep: match run.get("snr_sweep") {
                Some(e) => e.list()?,
                None => Vec::new(),
            },
            weights: path("weights"),
            conf_threshold: run.parse("conf_threshold")?.unwrap_or(0.5),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("manifest needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("manifest seeds must be distinct".into()));
        }
        if !self.scenario.is_file() {
            return Err(Error::Config(format!("scenario {} does not exist", self.scenario.display())));
        }
        match (&self.weights, self.detector) {
            (Some(w), _) if !w.is_file() => Err(Error::Config(format!("weights {} do not exist", w.display()))),
            (None, DetectorKind::Neural) => Err(Error::Config("the neural detector needs 'weights'".into())),
            _ => Ok(()),
        }
    }

    /// Text that [`RunManifest::parse`] reads back to an equal value when
    /// the paths are absolute.
    pub fn format(&self) -> String {
        let mut s = String::from("[run]\n");
        let join = |v: &[String]| v.join(",");
        let _ = writeln!(s, "scenario = {}", self.scenario.display());
        let _ = writeln!(s, "detector = {}", self.detector);
        let _ = writeln!(s, "fixed_r = {}", self.fixed_r);
        let _ = writeln!(s, "position_only = {}", self.position_only);
        let _ = writeln!(s, "seeds = {}", join(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>()));
        let _ = writeln!(s, "out = {}", self.out.display());
        if !self.snr_sweep.is_empty() {
            let _ = writeln!(s, "snr_sweep = {}", join(&self.snr_sweep.iter().map(f64::to_string).collect::<Vec<_>>()));
        }
        if let Some(w) = &self.weights {
            let _ = writeln!(s, "weights = {}", w.display());
        }
        let _ = writeln!(s, "conf_threshold = {}", self.conf_threshold);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.ini"), "[radar]\n").unwrap();
        let text = "[run]\nscenario = s.ini\ndetector = montecarlo\nfixed_r = true\nseeds = 3,1\nsnr_sweep = -10,0\n";
        let m = RunManifest::parse(text, dir.path()).unwrap();
        assert_eq!(m.detector, DetectorKind::MonteCarlo);
        assert!(m.fixed_r && !m.position_only);
        assert_eq!(m.seeds, vec![3, 1]);
        assert_eq!(m.snr_sweep, vec![-10.0, 0.0]);
        assert_eq!(m.out, dir.path().join("results"));
        assert_eq!(RunManifest::parse(&m.format(), Path::new("/")).unwrap(), m);
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.ini"), "").unwrap();
        for text in [
            "[run]\ndetector = cfar\n",
            "[run]\nscenario = missing.ini\n",
            "[run]\nscenario = s.ini\nseeds = 1,1\n",
            "[run]\nscenario = s.ini\ndetector = neural\n",
            "[run]\nscenario = s.ini\nfixed_r = yes\n",
            "[other]\n",
        ] {
            assert!(RunManifest::parse(text, dir.path()).is_err(), "{text}");
        }
    }
}
