//! INI run configuration: `[section]` headers, `key = value` lines, `#` or `;`
//! comments. Unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use wsail::nmf::NmfConfig;
use wsail::proposals::ProposalKinds;

/// Malformed or inconsistent configuration; reported as a usage error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn syntax_error(path: &str, line: usize, reason: &str) -> ConfigError {
    ConfigError(format!("{path}: line {line}: {reason}"))
}

fn value_error(section: &str, key: &str, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("[{section}] {key}: {reason}"))
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

pub fn parse_ini(text: &str, origin: &str) -> Result<Sections, ConfigError> {
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let syntax = |reason: &str| syntax_error(origin, i + 1, reason);
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| syntax("unterminated section header"))?.trim();
            if name.is_empty() {
                return Err(syntax("empty section name"));
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
        let section = current.as_ref().ok_or_else(|| syntax("entry before any section"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(syntax("empty key"));
        }
        let entries = sections.get_mut(section).expect("section registered");
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(syntax("duplicate key"));
        }
    }
    Ok(sections)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSetting {
    LabelKnown,
    LabelUnknown,
}

impl ModeSetting {
    pub fn name(self) -> &'static str {
        match self {
            ModeSetting::LabelKnown => "label-known",
            ModeSetting::LabelUnknown => "label-unknown",
        }
    }
}

impl std::str::FromStr for ModeSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "label-known" => Ok(ModeSetting::LabelKnown),
            "label-unknown" => Ok(ModeSetting::LabelUnknown),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSection {
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub noise_scenes: usize,
    pub seconds: f64,
    pub seed: u64,
    pub visual_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub hidden: usize,
    pub embedding: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub visual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceSection {
    pub tau: Option<f64>,
    pub mode: ModeSetting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub snr_levels: Vec<f64>,
    /// SNR of the mixtures used for SDR evaluation.
    pub sdr_snr: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub nmf: NmfConfig,
    pub model: ModelSection,
    pub proposals: ProposalKinds,
    pub enhance: EnhanceSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthSection {
                classes: 5,
                train: 100,
                test: 50,
                noise_scenes: 10,
                seconds: 10.0,
                seed: 0,
                visual_dim: None,
            },
            nmf: NmfConfig::default(),
            model: ModelSection {
                hidden: wsail::model::EMBED_HIDDEN,
                embedding: wsail::model::EMBED_DIM,
                lr: wsail::model::DEFAULT_LR,
                epochs: wsail::model::DEFAULT_EPOCHS,
                seed: 0,
                visual: false,
            },
            proposals: ProposalKinds::Tsp,
            enhance: EnhanceSection { tau: None, mode: ModeSetting::LabelUnknown },
            eval: EvalSection { snr_levels: vec![f64::INFINITY, 0.0, -10.0, -20.0], sdr_snr: 0.0, noise_seed: 0 },
        }
    }
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| value_error(section, key, e))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(value_error(section, key, format!("`{value}` is not a boolean"))),
    }
}

pub fn parse_snr(value: &str) -> Result<f64, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "clean" => Ok(f64::INFINITY),
        v => v.parse::<f64>().map_err(|e| format!("bad SNR `{value}`: {e}")).and_then(|x| {
            if x.is_nan() {
                Err("SNR is NaN".into())
            } else if x == f64::NEG_INFINITY {
                Err("SNR of -inf dB is not allowed".into())
            } else {
                Ok(x)
            }
        }),
    }
}

fn format_snr(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_optional<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_value(section, key, value).map(Some)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_ini(&text, &path.display().to_string())
    }

    pub fn from_ini(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut tsp = cfg.proposals.uses_tsp();
        let mut ncp = cfg.proposals.uses_ncp();
        for (section, entries) in parse_ini(text, origin)? {
            for (key, value) in entries {
                let (s, k, v) = (section.as_str(), key.as_str(), value.as_str());
                match (s, k) {
                    ("synth", "classes") => cfg.synth.classes = parse_value(s, k, v)?,
                    ("synth", "train") => cfg.synth.train = parse_value(s, k, v)?,
                    ("synth", "test") => cfg.synth.test = parse_value(s, k, v)?,
                    ("synth", "noise_scenes") => cfg.synth.noise_scenes = parse_value(s, k, v)?,
                    ("synth", "seconds") => cfg.synth.seconds = parse_value(s, k, v)?,
                    ("synth", "seed") => cfg.synth.seed = parse_value(s, k, v)?,
                    ("synth", "visual_dim") => cfg.synth.visual_dim = parse_optional(s, k, v)?,
                    ("nmf", "components") => cfg.nmf.components = parse_value(s, k, v)?,
                    ("nmf", "iterations") => cfg.nmf.iterations = parse_value(s, k, v)?,
                    ("nmf", "seed") => cfg.nmf.seed = parse_value(s, k, v)?,
                    ("model", "hidden") => cfg.model.hidden = parse_value(s, k, v)?,
                    ("model", "embedding") => cfg.model.embedding = parse_value(s, k, v)?,
                    ("model", "lr") => cfg.model.lr = parse_value(s, k, v)?,
                    ("model", "epochs") => cfg.model.epochs = parse_value(s, k, v)?,
                    ("model", "seed") => cfg.model.seed = parse_value(s, k, v)?,
                    ("model", "visual") => cfg.model.visual = parse_bool(s, k, v)?,
                    ("proposals", "tsp") => tsp = parse_bool(s, k, v)?,
                    ("proposals", "ncp") => ncp = parse_bool(s, k, v)?,
                    ("enhance", "tau") => cfg.enhance.tau = parse_optional(s, k, v)?,
                    ("enhance", "mode") => cfg.enhance.mode = parse_value(s, k, v)?,
                    ("eval", "snr_levels") => {
                        cfg.eval.snr_levels = v
                            .split(',')
                            .map(parse_snr)
                            .collect::<Result<_, _>>()
                            .map_err(|reason| value_error(s, k, reason))?
                    }
                    ("eval", "sdr_snr") => {
                        cfg.eval.sdr_snr = parse_snr(v).map_err(|reason| value_error(s, k, reason))?
                    }
                    ("eval", "noise_seed") => cfg.eval.noise_seed = parse_value(s, k, v)?,
                    _ => return Err(ConfigError(format!("unknown config entry [{section}] {key}"))),
                }
            }
        }
        cfg.proposals = ProposalKinds::from_flags(tsp, ncp)
            .ok_or_else(|| ConfigError("at least one proposal type must be enabled".into()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.nmf.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.model.hidden == 0 || self.model.embedding == 0 {
            return Err(ConfigError("model dimensions must be positive".into()));
        }
        if !(self.model.lr > 0.0 && self.model.lr.is_finite()) {
            return Err(ConfigError("learning rate must be positive".into()));
        }
        if let Some(t) = self.enhance.tau {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError(format!("tau must lie in [0, 1], got {t}")));
            }
        }
        if self.eval.snr_levels.is_empty() {
            return Err(ConfigError("need at least one SNR level".into()));
        }
        Ok(())
    }

    /// Overrides every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.nmf.seed = seed;
        self.model.seed = seed;
        self.eval.noise_seed = seed;
    }

    /// Fully materialized config; loading it back yields an equal config.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let s = &self.synth;
        let _ = writeln!(
            out,
            "[synth]\nclasses = {}\ntrain = {}\ntest = {}\nnoise_scenes = {}\nseconds = {}\nseed = {}",
            s.classes, s.train, s.test, s.noise_scenes, s.seconds, s.seed
        );
        let _ = writeln!(out, "visual_dim = {}", s.visual_dim.map(|d| d.to_string()).unwrap_or_else(|| "none".into()));
        let _ = writeln!(
            out,
            "\n[nmf]\ncomponents = {}\niterations = {}\nseed = {}",
            self.nmf.components, self.nmf.iterations, self.nmf.seed
        );
        let m = &self.model;
        let _ = writeln!(
            out,
            "\n[model]\nhidden = {}\nembedding = {}\nlr = {:e}\nepochs = {}\nseed = {}\nvisual = {}",
            m.hidden, m.embedding, m.lr, m.epochs, m.seed, m.visual
        );
        let _ =
            writeln!(out, "\n[proposals]\ntsp = {}\nncp = {}", self.proposals.uses_tsp(), self.proposals.uses_ncp());
        let tau = self.enhance.tau.map(|t| t.to_string()).unwrap_or_else(|| "none".into());
        let _ = writeln!(out, "\n[enhance]\ntau = {tau}\nmode = {}", self.enhance.mode.name());
        let levels: Vec<String> = self.eval.snr_levels.iter().map(|&v| format_snr(v)).collect();
        let _ = writeln!(
            out,
            "\n[eval]\nsnr_levels = {}\nsdr_snr = {}\nnoise_seed = {}",
            levels.join(", "),
            format_snr(self.eval.sdr_snr),
            self.eval.noise_seed
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let s = parse_ini("# top\n[a]\nx = 1\n; note\n\n[b]\ny=two words\n", "t").unwrap();
        assert_eq!(s["a"]["x"], "1");
        assert_eq!(s["b"]["y"], "two words");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let line_of = |text: &str| parse_ini(text, "t").unwrap_err().to_string();
        assert!(line_of("x = 1").starts_with("t: line 1:"));
        assert!(line_of("[a]\nnovalue").starts_with("t: line 2:"));
        assert!(line_of("[a]\nx=1\nx=2").contains("duplicate key"));
        assert!(line_of("[a").contains("unterminated"));
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig { proposals: ProposalKinds::Both, ..RunConfig::default() };
        cfg.enhance.tau = Some(0.2);
        cfg.model.lr = 3e-4;
        cfg.synth.visual_dim = Some(16);
        let back = RunConfig::from_ini(&cfg.to_ini(), "snapshot").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_ini(&RunConfig::default().to_ini(), "d").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let err = |text: &str| RunConfig::from_ini(text, "t").unwrap_err().to_string();
        assert!(err("[proposals]\ntsp = false\nncp = false").contains("proposal"));
        assert!(err("[nmf]\nrank = 3").contains("unknown config entry [nmf] rank"));
        assert!(err("[nmf]\ncomponents = many").starts_with("[nmf] components:"));
        assert!(RunConfig::from_ini("[enhance]\ntau = 1.5", "t").is_err());
    }

    #[test]
    fn snr_spellings() {
        assert_eq!(parse_snr("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_snr(" -10 ").unwrap(), -10.0);
        assert!(parse_snr("loud").is_err());
        assert!(parse_snr("-inf").is_err());
        let cfg = RunConfig::from_ini("[eval]\nsnr_levels = 0, -10, -20", "t").unwrap();
        assert_eq!(cfg.eval.snr_levels, vec![0.0, -10.0, -20.0]);
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(9);
        assert_eq!((cfg.synth.seed, cfg.nmf.seed, cfg.model.seed, cfg.eval.noise_seed), (9, 9, 9, 9));
    }
}
