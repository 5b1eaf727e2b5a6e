//! Run configuration: a plain-text key-value format with `[section]`
//! headers, dot-path overrides, and a canonical snapshot that replays a run
//! exactly.
//!
//! ```text
//! seed = 1
//! [data]
//! source = synth
//! [train]
//! lr = 0.0001
//! ```
//!
//! Unknown keys are rejected; every effective value is echoed into the
//! snapshot, and `parse(snapshot(cfg)) == cfg`.

use crate::backbone::BackboneKind;
use crate::data::{AnomalySpec, SplitSpec, SynthProfile};
use crate::error::{Error, Result};
use crate::plugin::{BackboneSpec, GlaffConfig, ModelSpec};
use crate::timefeat::FeatureMode;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synth,
    Csv(String),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; empty means: GLAFF_OUT_DIR env var, else "glaff-out".
    pub out: String,
    /// Worker threads; 0 = automatic, 1 = single-threaded mode.
    pub threads: usize,

    pub source: DataSource,
    pub feature_mode: FeatureMode,
    pub split: SplitSpec,
    pub history: usize,
    pub horizon: usize,

    pub synth_n: usize,
    pub synth_channels: usize,
    pub synth_step_minutes: u32,
    pub synth_weekday_amplitude: f64,
    pub synth_weekend_amplitude: f64,
    pub synth_noise_sigma: f64,
    pub synth_drift: f64,
    pub synth_base_level: f64,
    pub synth_seed: u64,

    pub glaff_enabled: bool,
    pub glaff: GlaffConfig,

    pub backbone_kind: Option<BackboneKind>,
    pub backbone_kernel: usize,
    pub backbone_period: usize,

    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub freeze_backbone: bool,

    /// Comma-separated anomaly specs ("point:0.1:8,contextual:0.1:0.4").
    pub anomaly_specs: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: String::new(),
            threads: 0,
            source: DataSource::Synth,
            feature_mode: FeatureMode::Raw,
            split: SplitSpec::default(),
            history: 96,
            horizon: 96,
            synth_n: 2240,
            synth_channels: 3,
            synth_step_minutes: 60,
            synth_weekday_amplitude: 2.0,
            synth_weekend_amplitude: 0.8,
            synth_noise_sigma: 0.1,
            synth_drift: 0.0,
            synth_base_level: 10.0,
            synth_seed: 1,
            glaff_enabled: true,
            glaff: GlaffConfig::default(),
            backbone_kind: Some(BackboneKind::DLinear),
            backbone_kernel: 25,
            backbone_period: 24,
            lr: 1e-4,
            batch: 32,
            epochs: 10,
            freeze_backbone: false,
            anomaly_specs: String::new(),
        }
    }
}

impl RunConfig {
    /// Apply one dot-path override ("train.lr", "seed", ...). Values are
    /// type-checked against the target field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let parse_u64 = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::Config(format!("'{key}' expects an integer, got '{v}'")))
        };
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("'{key}' expects an integer, got '{v}'")))
        };
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("'{key}' expects a number, got '{v}'")))
        };
        let parse_bool = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(Error::Config(format!(
                "'{key}' expects true|false, got '{v}'"
            ))),
        };
        match key {
            "seed" => self.seed = parse_u64(v)?,
            "out" => self.out = v.to_string(),
            "threads" => self.threads = parse_usize(v)?,
            "data.source" => match v {
                "synth" => self.source = DataSource::Synth,
                "csv" => {
                    if !matches!(self.source, DataSource::Csv(_)) {
                        self.source = DataSource::Csv(String::new());
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "'data.source' expects synth|csv, got '{other}'"
                    )))
                }
            },
            "data.csv_path" => {
                if v.is_empty() {
                    if matches!(self.source, DataSource::Csv(_)) {
                        self.source = DataSource::Csv(String::new());
                    }
                } else {
                    self.source = DataSource::Csv(v.to_string());
                }
            }
            "data.feature_mode" => {
                self.feature_mode = FeatureMode::parse(v)?;
                self.glaff.feature_mode = self.feature_mode;
            }
            "split.train" => self.split.train = parse_f64(v)?,
            "split.val" => self.split.val = parse_f64(v)?,
            "split.test" => self.split.test = parse_f64(v)?,
            "window.history" => self.history = parse_usize(v)?,
            "window.horizon" => self.horizon = parse_usize(v)?,
            "synth.n" => self.synth_n = parse_usize(v)?,
            "synth.channels" => self.synth_channels = parse_usize(v)?,
            "synth.step_minutes" => self.synth_step_minutes = parse_usize(v)? as u32,
            "synth.weekday_amplitude" => self.synth_weekday_amplitude = parse_f64(v)?,
            "synth.weekend_amplitude" => self.synth_weekend_amplitude = parse_f64(v)?,
            "synth.noise_sigma" => self.synth_noise_sigma = parse_f64(v)?,
            "synth.drift" => self.synth_drift = parse_f64(v)?,
            "synth.base_level" => self.synth_base_level = parse_f64(v)?,
            "synth.seed" => self.synth_seed = parse_u64(v)?,
            "glaff.enabled" => self.glaff_enabled = parse_bool(v)?,
            "glaff.dim" => self.glaff.dim = parse_usize(v)?,
            "glaff.dff" => self.glaff.dff = parse_usize(v)?,
            "glaff.heads" => self.glaff.heads = parse_usize(v)?,
            "glaff.layers" => self.glaff.layers = parse_usize(v)?,
            "glaff.dropout" => self.glaff.dropout = parse_f64(v)?,
            "glaff.quantile" => self.glaff.quantile = parse_f64(v)?,
            "ablation.no_attention" => self.glaff.no_attention = parse_bool(v)?,
            "ablation.no_quantile" => self.glaff.no_quantile = parse_bool(v)?,
            "ablation.no_adaptive" => self.glaff.no_adaptive = parse_bool(v)?,
            "ablation.no_backbone" => self.glaff.no_backbone = parse_bool(v)?,
            "backbone.kind" => {
                self.backbone_kind = match v {
                    "none" => None,
                    other => Some(BackboneKind::parse(other)?),
                }
            }
            "backbone.kernel" => self.backbone_kernel = parse_usize(v)?,
            "backbone.period" => self.backbone_period = parse_usize(v)?,
            "train.lr" => self.lr = parse_f64(v)?,
            "train.batch" => self.batch = parse_usize(v)?,
            "train.epochs" => self.epochs = parse_usize(v)?,
            "train.freeze_backbone" => self.freeze_backbone = parse_bool(v)?,
            "anomaly.specs" => {
                if !v.is_empty() {
                    AnomalySpec::parse_list(v)?;
                }
                self.anomaly_specs = v.to_string();
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse the documented key-value/section format on top of defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: malformed section '{raw}'", i + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", i + 1))
            })?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&full, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::parse(&text)
    }

    /// Canonical snapshot of every effective value; replaying it reproduces
    /// the run.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let csv_path = match &self.source {
            DataSource::Csv(p) => p.clone(),
            DataSource::Synth => String::new(),
        };
        let source = match &self.source {
            DataSource::Synth => "synth",
            DataSource::Csv(_) => "csv",
        };
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("out = {}\n", self.out));
        s.push_str(&format!("threads = {}\n", self.threads));
        s.push_str("\n[data]\n");
        s.push_str(&format!("source = {source}\n"));
        s.push_str(&format!("csv_path = {csv_path}\n"));
        s.push_str(&format!("feature_mode = {}\n", self.feature_mode.as_str()));
        s.push_str("\n[split]\n");
        s.push_str(&format!("train = {}\n", self.split.train));
        s.push_str(&format!("val = {}\n", self.split.val));
        s.push_str(&format!("test = {}\n", self.split.test));
        s.push_str("\n[window]\n");
        s.push_str(&format!("history = {}\n", self.history));
        s.push_str(&format!("horizon = {}\n", self.horizon));
        s.push_str("\n[synth]\n");
        s.push_str(&format!("n = {}\n", self.synth_n));
        s.push_str(&format!("channels = {}\n", self.synth_channels));
        s.push_str(&format!("step_minutes = {}\n", self.synth_step_minutes));
        s.push_str(&format!(
            "weekday_amplitude = {}\n",
            self.synth_weekday_amplitude
        ));
        s.push_str(&format!(
            "weekend_amplitude = {}\n",
            self.synth_weekend_amplitude
        ));
        s.push_str(&format!("noise_sigma = {}\n", self.synth_noise_sigma));
        s.push_str(&format!("drift = {}\n", self.synth_drift));
        s.push_str(&format!("base_level = {}\n", self.synth_base_level));
        s.push_str(&format!("seed = {}\n", self.synth_seed));
        s.push_str("\n[glaff]\n");
        s.push_str(&format!("enabled = {}\n", self.glaff_enabled));
        s.push_str(&format!("dim = {}\n", self.glaff.dim));
        s.push_str(&format!("dff = {}\n", self.glaff.dff));
        s.push_str(&format!("heads = {}\n", self.glaff.heads));
        s.push_str(&format!("layers = {}\n", self.glaff.layers));
        s.push_str(&format!("dropout = {}\n", self.glaff.dropout));
        s.push_str(&format!("quantile = {}\n", self.glaff.quantile));
        s.push_str("\n[ablation]\n");
        s.push_str(&format!("no_attention = {}\n", self.glaff.no_attention));
        s.push_str(&format!("no_quantile = {}\n", self.glaff.no_quantile));
        s.push_str(&format!("no_adaptive = {}\n", self.glaff.no_adaptive));
        s.push_str(&format!("no_backbone = {}\n", self.glaff.no_backbone));
        s.push_str("\n[backbone]\n");
        s.push_str(&format!(
            "kind = {}\n",
            self.backbone_kind.map_or("none", |k| k.as_str())
        ));
        s.push_str(&format!("kernel = {}\n", self.backbone_kernel));
        s.push_str(&format!("period = {}\n", self.backbone_period));
        s.push_str("\n[train]\n");
        s.push_str(&format!("lr = {}\n", self.lr));
        s.push_str(&format!("batch = {}\n", self.batch));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("freeze_backbone = {}\n", self.freeze_backbone));
        s.push_str("\n[anomaly]\n");
        s.push_str(&format!("specs = {}\n", self.anomaly_specs));
        s
    }

    /// Deterministic run identifier: a hash of the snapshot with the output
    /// path excluded, so metrics bytes never depend on where they land.
    pub fn run_id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for line in self.snapshot().lines() {
            if line.starts_with("out = ") {
                continue;
            }
            for b in line.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Effective output root: config value, else GLAFF_OUT_DIR, else a
    /// default directory.
    pub fn out_dir(&self) -> std::path::PathBuf {
        if !self.out.is_empty() {
            return self.out.clone().into();
        }
        if let Ok(v) = std::env::var("GLAFF_OUT_DIR") {
            if !v.is_empty() {
                return v.into();
            }
        }
        "glaff-out".into()
    }

    pub fn anomalies(&self) -> Result<Vec<AnomalySpec>> {
        if self.anomaly_specs.is_empty() {
            return Ok(Vec::new());
        }
        AnomalySpec::parse_list(&self.anomaly_specs)
    }

    pub fn synth_profile(&self) -> SynthProfile {
        SynthProfile {
            channels: self.synth_channels,
            step_minutes: self.synth_step_minutes,
            weekday_amplitude: self.synth_weekday_amplitude,
            weekend_amplitude: self.synth_weekend_amplitude,
            noise_sigma: self.synth_noise_sigma,
            drift_per_step: self.synth_drift,
            base_level: self.synth_base_level,
            seed: self.synth_seed,
            ..SynthProfile::default()
        }
    }

    /// The model this config describes, for `channels` data channels.
    pub fn model_spec(&self, channels: usize) -> Result<ModelSpec> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        let plugin = if self.glaff_enabled {
            let mut g = self.glaff.clone();
            g.feature_mode = self.feature_mode;
            g.validate()?;
            Some(g)
        } else {
            None
        };
        let backbone = self.backbone_kind.map(|kind| BackboneSpec {
            kind,
            kernel: self.backbone_kernel,
            period: self.backbone_period,
        });
        if plugin.is_none() && backbone.is_none() {
            return Err(Error::Config(
                "glaff.enabled=false requires a backbone".into(),
            ));
        }
        Ok(ModelSpec {
            history: self.history,
            horizon: self.horizon,
            channels,
            feature_mode: self.feature_mode,
            plugin,
            backbone,
            freeze_backbone: self.freeze_backbone,
        })
    }
}
