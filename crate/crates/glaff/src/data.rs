//! Data pipeline: CSV ingestion, chronological splitting, train-statistics
//! standardization, sliding-window extraction, synthetic weekly/daily series,
//! and controlled anomaly injection.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::timefeat::{parse_timestamp, FeatureMode, Timestamp};

/// A multivariate series with strictly increasing timestamps.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub timestamps: Vec<Timestamp>,
    /// Row-major [n × c].
    pub values: Vec<f64>,
    pub channels: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channel_count() + channel]
    }

    /// Seconds between consecutive samples (regular spacing assumed).
    pub fn step_seconds(&self) -> i64 {
        if self.len() < 2 {
            return 3600;
        }
        self.timestamps[1].epoch_seconds() - self.timestamps[0].epoch_seconds()
    }

    /// Samples per 24 hours at this granularity (at least 1).
    pub fn points_per_day(&self) -> usize {
        (86_400 / self.step_seconds().max(1)).max(1) as usize
    }

    fn rows(&self, range: std::ops::Range<usize>) -> Dataset {
        let c = self.channel_count();
        Dataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range.start * c..range.end * c].to_vec(),
            channels: self.channels.clone(),
        }
    }
}

/// Load an ETT-format CSV: header with a leading "date" column, then one
/// numeric column per channel. Timestamps must be strictly increasing.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Ingestion {
        line: 1,
        message: "empty file".into(),
    })?;
    let mut cols = header.split(',');
    match cols.next() {
        Some(c) if c.trim().eq_ignore_ascii_case("date") => {}
        _ => {
            return Err(Error::Ingestion {
                line: 1,
                message: "first column must be named 'date'".into(),
            })
        }
    }
    let channels: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if channels.is_empty() {
        return Err(Error::Ingestion {
            line: 1,
            message: "no value columns after 'date'".into(),
        });
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut prev: Option<i64> = None;
    for (idx, raw) in lines {
        let line_no = idx + 1; // 1-based file line
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',');
        let date = fields.next().unwrap_or("");
        let ts = parse_timestamp(date).map_err(|e| Error::Ingestion {
            line: line_no,
            message: e.to_string(),
        })?;
        let secs = ts.epoch_seconds();
        if let Some(p) = prev {
            if secs <= p {
                return Err(Error::Ingestion {
                    line: line_no,
                    message: format!("timestamp {ts} not strictly increasing"),
                });
            }
        }
        prev = Some(secs);

        let mut row_vals = Vec::with_capacity(channels.len());
        for (ci, field) in fields.enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Ingestion {
                line: line_no,
                message: format!("non-numeric cell '{}' in column {}", field.trim(), ci + 2),
            })?;
            if v.is_nan() {
                return Err(Error::Ingestion {
                    line: line_no,
                    message: format!("NaN value in column {}", ci + 2),
                });
            }
            row_vals.push(v);
        }
        if row_vals.len() != channels.len() {
            return Err(Error::Ingestion {
                line: line_no,
                message: format!(
                    "expected {} value columns, found {}",
                    channels.len(),
                    row_vals.len()
                ),
            });
        }
        timestamps.push(ts);
        values.extend_from_slice(&row_vals);
    }
    if timestamps.is_empty() {
        return Err(Error::Ingestion {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(Dataset {
        timestamps,
        values,
        channels,
    })
}

/// Serialize a dataset in the same CSV format `load_csv` reads.
pub fn to_csv_string(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.values.len() * 8);
    out.push_str("date");
    for ch in &ds.channels {
        out.push(',');
        out.push_str(ch);
    }
    out.push('\n');
    let c = ds.channel_count();
    for (i, ts) in ds.timestamps.iter().enumerate() {
        out.push_str(&ts.format());
        for ch in 0..c {
            out.push(',');
            out.push_str(&format!("{}", ds.values[i * c + ch]));
        }
        out.push('\n');
    }
    out
}

/// Chronological split ratios; must each be positive and sum to one.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.val <= 0.0 || self.test <= 0.0 {
            return Err(Error::Config("split ratios must all be positive".into()));
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {}",
                self.train + self.val + self.test
            )));
        }
        Ok(())
    }
}

/// Split with no shuffling at floor(n·r_train) and floor(n·(r_train+r_val)).
pub fn chrono_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let n = ds.len();
    if n < 10 {
        return Err(Error::Config(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let b1 = (n as f64 * spec.train).floor() as usize;
    let b2 = (n as f64 * (spec.train + spec.val)).floor() as usize;
    Ok((ds.rows(0..b1), ds.rows(b1..b2), ds.rows(b2..n)))
}

/// Per-channel training statistics used for z-scoring.
#[derive(Clone, Copy, Debug)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Z-score every split using the training split's per-channel mean and
/// population standard deviation (guarded by 1e-8).
pub fn standardize(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<(Dataset, Dataset, Dataset, Vec<ChannelStats>)> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let c = train.channel_count();
    let n = train.len() as f64;
    let mut stats = Vec::with_capacity(c);
    for ch in 0..c {
        let mut sum = 0.0;
        for i in 0..train.len() {
            sum += train.value(i, ch);
        }
        let mean = sum / n;
        let mut varsum = 0.0;
        for i in 0..train.len() {
            let d = train.value(i, ch) - mean;
            varsum += d * d;
        }
        let std = (varsum / n).sqrt();
        stats.push(ChannelStats { mean, std });
    }
    let apply = |ds: &Dataset| -> Dataset {
        let mut out = ds.clone();
        for i in 0..ds.len() {
            for ch in 0..c {
                let s = &stats[ch];
                out.values[i * c + ch] = (ds.values[i * c + ch] - s.mean) / (s.std + 1e-8);
            }
        }
        out
    };
    Ok((apply(train), apply(val), apply(test), stats))
}

/// Prepend the last `history` rows of `prev` to `cur`, the standard
/// evaluation protocol that lets val/test windows reach back for history
/// context while keeping every target inside its own split.
pub fn extend_with_history(prev: &Dataset, cur: &Dataset, history: usize) -> Dataset {
    let take = history.min(prev.len());
    let c = prev.channel_count();
    let start = prev.len() - take;
    let mut timestamps = prev.timestamps[start..].to_vec();
    timestamps.extend_from_slice(&cur.timestamps);
    let mut values = prev.values[start * c..].to_vec();
    values.extend_from_slice(&cur.values);
    Dataset {
        timestamps,
        values,
        channels: cur.channels.clone(),
    }
}

/// One training/evaluation sample.
#[derive(Clone, Debug)]
pub struct Window {
    /// Start row of the history span within the source segment.
    pub start: usize,
    /// History observations, [h × c].
    pub x: Vec<f64>,
    /// History timestamp features, [h × 6].
    pub s: Vec<f64>,
    /// Future timestamp features, [p × 6].
    pub t: Vec<f64>,
    /// Targets, [p × c].
    pub y: Vec<f64>,
}

/// Sliding-window view over a segment with precomputed timestamp features.
pub struct WindowPlan<'a> {
    segment: &'a Dataset,
    feats: Vec<f64>,
    pub history: usize,
    pub horizon: usize,
}

impl<'a> WindowPlan<'a> {
    pub fn new(
        segment: &'a Dataset,
        history: usize,
        horizon: usize,
        mode: FeatureMode,
    ) -> Result<Self> {
        if history == 0 || horizon == 0 {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        let need = history + horizon;
        if segment.len() < need {
            return Err(Error::Config(format!(
                "segment of {} rows is too short for windows: need at least {need} (h={history} + p={horizon})",
                segment.len()
            )));
        }
        let feats_tensor =
            crate::timefeat::featurize_window(&segment.timestamps, mode);
        Ok(WindowPlan {
            segment,
            feats: feats_tensor.data().to_vec(),
            history,
            horizon,
        })
    }

    pub fn count(&self) -> usize {
        self.segment.len() - (self.history + self.horizon) + 1
    }

    pub fn channel_count(&self) -> usize {
        self.segment.channel_count()
    }

    pub fn window_at(&self, start: usize) -> Window {
        let (h, p) = (self.history, self.horizon);
        let c = self.segment.channel_count();
        let x = self.segment.values[start * c..(start + h) * c].to_vec();
        let y = self.segment.values[(start + h) * c..(start + h + p) * c].to_vec();
        let s = self.feats[start * 6..(start + h) * 6].to_vec();
        let t = self.feats[(start + h) * 6..(start + h + p) * 6].to_vec();
        Window { start, x, s, t, y }
    }

    pub fn iter(&self, stride: usize) -> impl Iterator<Item = Window> + '_ {
        let stride = stride.max(1);
        (0..self.count()).step_by(stride).map(|i| self.window_at(i))
    }
}

/// Convenience for the spec surface: stride-`stride` windows over a split.
pub fn window_iter(
    split: &Dataset,
    history: usize,
    horizon: usize,
    stride: usize,
    mode: FeatureMode,
) -> Result<Vec<Window>> {
    let plan = WindowPlan::new(split, history, horizon, mode)?;
    Ok(plan.iter(stride).collect())
}

// ---------------------------------------------------------------------------
// synthetic generation

/// Shape of the synthetic hourly benchmark series: a daily sinusoid whose
/// amplitude alternates between weekday and weekend levels, plus noise and
/// optional drift.
#[derive(Clone, Debug)]
pub struct SynthProfile {
    pub channels: usize,
    pub step_minutes: u32,
    pub weekday_amplitude: f64,
    pub weekend_amplitude: f64,
    pub noise_sigma: f64,
    pub drift_per_step: f64,
    pub base_level: f64,
    pub seed: u64,
    pub start: Timestamp,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            channels: 3,
            step_minutes: 60,
            weekday_amplitude: 2.0,
            weekend_amplitude: 0.8,
            noise_sigma: 0.1,
            drift_per_step: 0.0,
            base_level: 10.0,
            seed: 1,
            // a Monday midnight, so weeks align with the series start
            start: Timestamp {
                year: 2016,
                month: 1,
                day: 4,
                hour: 0,
                minute: 0,
                second: 0,
            },
        }
    }
}

/// Generate `n` points of the synthetic series. Fully determined by the
/// profile (seed included).
pub fn synth_generate(n: usize, profile: &SynthProfile) -> Result<Dataset> {
    if profile.channels == 0 {
        return Err(Error::Config("need at least one channel".into()));
    }
    if profile.step_minutes == 0 {
        return Err(Error::Config("step must be positive".into()));
    }
    let week_points = (7 * 24 * 60 / profile.step_minutes) as usize;
    if n < week_points {
        return Err(Error::Config(format!(
            "need at least one full week ({week_points} points at {} min), got {n}",
            profile.step_minutes
        )));
    }
    let c = profile.channels;
    let mut phase_rng = DetRng::new(profile.seed).derive("phase");
    let phases: Vec<f64> = (0..c)
        .map(|_| phase_rng.uniform(0.0, 2.0 * std::f64::consts::PI))
        .collect();
    let mut noise_rng = DetRng::new(profile.seed).derive("noise");

    let mut timestamps = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * c);
    let mut ts = profile.start;
    for step in 0..n {
        let amplitude = if ts.weekday() < 5 {
            profile.weekday_amplitude
        } else {
            profile.weekend_amplitude
        };
        let hour_frac =
            f64::from(ts.hour) + f64::from(ts.minute) / 60.0 + f64::from(ts.second) / 3600.0;
        let angle = 2.0 * std::f64::consts::PI * hour_frac / 24.0;
        for ch in 0..c {
            let noise = if profile.noise_sigma > 0.0 {
                profile.noise_sigma * noise_rng.standard_normal()
            } else {
                0.0
            };
            let v = profile.base_level
                + profile.drift_per_step * step as f64
                + amplitude * (angle + phases[ch]).sin()
                + noise;
            values.push(v);
        }
        timestamps.push(ts);
        ts = ts.add_minutes(i64::from(profile.step_minutes));
    }
    let channels = (0..c).map(|i| format!("ch{i}")).collect();
    Ok(Dataset {
        timestamps,
        values,
        channels,
    })
}

// ---------------------------------------------------------------------------
// anomaly injection

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    /// Isolated extreme value: median ± magnitude·IQR.
    Point,
    /// A contiguous day rescaled toward its own mean by the magnitude factor
    /// (holiday emulation: weekday swing suppressed to weekend level).
    Contextual,
}

#[derive(Clone, Debug)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    /// Fraction of windows to pollute.
    pub rate: f64,
    /// Point: multiple of the channel IQR. Contextual: suppression factor.
    pub magnitude: f64,
    pub seed: u64,
}

impl AnomalySpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "anomaly rate {} outside [0, 1]",
                self.rate
            )));
        }
        Ok(())
    }

    /// Parse "kind:rate:magnitude" with an optional ":seed" suffix.
    pub fn parse(text: &str) -> Result<AnomalySpec> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(Error::Config(format!(
                "anomaly spec '{text}' must be kind:rate:magnitude[:seed]"
            )));
        }
        let kind = match parts[0] {
            "point" => AnomalyKind::Point,
            "contextual" => AnomalyKind::Contextual,
            other => {
                return Err(Error::Config(format!(
                    "unknown anomaly kind '{other}' (expected point|contextual)"
                )))
            }
        };
        let rate: f64 = parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("bad anomaly rate '{}'", parts[1])))?;
        let magnitude: f64 = parts[2]
            .parse()
            .map_err(|_| Error::Config(format!("bad anomaly magnitude '{}'", parts[2])))?;
        let seed: u64 = match parts.get(3) {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad anomaly seed '{s}'")))?,
            None => 0,
        };
        let spec = AnomalySpec {
            kind,
            rate,
            magnitude,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parse a comma-separated list of specs.
    pub fn parse_list(text: &str) -> Result<Vec<AnomalySpec>> {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| AnomalySpec::parse(s.trim()))
            .collect()
    }
}

/// Robust per-channel location and spread of a dataset.
#[derive(Clone, Copy, Debug)]
pub struct RobustStats {
    pub median: f64,
    pub iqr: f64,
}

pub fn robust_channel_stats(ds: &Dataset) -> Vec<RobustStats> {
    let c = ds.channel_count();
    let mut out = Vec::with_capacity(c);
    for ch in 0..c {
        let mut col: Vec<f64> = (0..ds.len()).map(|i| ds.value(i, ch)).collect();
        col.sort_by(f64::total_cmp);
        let q = |p: f64| -> f64 {
            let r = (col.len() - 1) as f64 * p;
            let i = r.floor() as usize;
            let f = r - i as f64;
            if f > 0.0 {
                col[i] + f * (col[i + 1] - col[i])
            } else {
                col[i]
            }
        };
        out.push(RobustStats {
            median: q(0.5),
            iqr: q(0.75) - q(0.25),
        });
    }
    out
}

fn pollute_one_window(
    w: &mut Window,
    kind: AnomalyKind,
    magnitude: f64,
    stats: &[RobustStats],
    points_per_day: usize,
    rng: &mut DetRng,
) {
    let c = stats.len();
    let h = w.x.len() / c;
    match kind {
        AnomalyKind::Point => {
            for (ch, st) in stats.iter().enumerate() {
                let idx = rng.below(h);
                let sign = if rng.unit_f64() < 0.5 { -1.0 } else { 1.0 };
                w.x[idx * c + ch] = st.median + sign * magnitude * st.iqr;
            }
        }
        AnomalyKind::Contextual => {
            let day = points_per_day.min(h).max(1);
            // prefer day-aligned starts (midnight in the raw hour feature);
            // fall back to an arbitrary contiguous run
            let aligned: Vec<usize> = (0..=h - day)
                .filter(|&i| w.s[i * 6 + 3] == 0.0 && w.s[i * 6 + 4] == 0.0)
                .collect();
            let start = if aligned.is_empty() {
                rng.below(h - day + 1)
            } else {
                aligned[rng.below(aligned.len())]
            };
            for ch in 0..c {
                let mut mean = 0.0;
                for i in start..start + day {
                    mean += w.x[i * c + ch];
                }
                mean /= day as f64;
                for i in start..start + day {
                    let v = w.x[i * c + ch];
                    w.x[i * c + ch] = mean + magnitude * (v - mean);
                }
            }
        }
    }
}

/// Pollute the history tensors of a `rate` fraction of the given windows.
/// Targets are never touched. Returns the indices of polluted windows.
pub fn pollute_windows(
    windows: &mut [Window],
    specs: &[AnomalySpec],
    stats: &[RobustStats],
    points_per_day: usize,
) -> Result<Vec<usize>> {
    let mut touched = Vec::new();
    for spec in specs {
        spec.validate()?;
        let count = (spec.rate * windows.len() as f64).floor() as usize;
        if spec.rate > 0.0 && windows.is_empty() {
            return Err(Error::Config(
                "anomaly rate given but no eligible windows".into(),
            ));
        }
        let mut rng = DetRng::new(spec.seed).derive("window-pollution");
        let chosen = rng.sample_indices(windows.len(), count);
        for &wi in &chosen {
            pollute_one_window(
                &mut windows[wi],
                spec.kind,
                spec.magnitude,
                stats,
                points_per_day,
                &mut rng,
            );
            touched.push(wi);
        }
    }
    touched.sort_unstable();
    touched.dedup();
    Ok(touched)
}

/// The part of a dataset whose windows are eligible for pollution: test
/// windows with targets starting at or after `first_target`.
#[derive(Clone, Copy, Debug)]
pub struct TestRegion {
    pub first_target: usize,
    pub history: usize,
    pub horizon: usize,
}

/// Dataset-level injection for export: returns a polluted copy of `ds`,
/// with anomalies placed inside history spans of test windows. Evaluation
/// pipelines should prefer [`pollute_windows`], which leaves targets
/// untouched by construction.
pub fn inject_anomalies(
    ds: &Dataset,
    spec: &AnomalySpec,
    region: &TestRegion,
) -> Result<Dataset> {
    spec.validate()?;
    let n = ds.len();
    let (h, p) = (region.history, region.horizon);
    if region.first_target < h || region.first_target + p > n {
        return Err(Error::Config(format!(
            "test region (first target {}, h={h}, p={p}) does not fit dataset of {n} rows",
            region.first_target
        )));
    }
    let eligible = n - p - region.first_target + 1;
    let count = (spec.rate * eligible as f64).floor() as usize;
    if spec.rate > 0.0 && eligible == 0 {
        return Err(Error::Config(
            "anomaly rate given but no eligible windows".into(),
        ));
    }
    let mut out = ds.clone();
    if count == 0 {
        return Ok(out);
    }
    let stats = robust_channel_stats(ds);
    let c = ds.channel_count();
    let day = ds.points_per_day().min(h).max(1);
    let mut rng = DetRng::new(spec.seed).derive("dataset-pollution");
    let chosen = rng.sample_indices(eligible, count);
    for &k in &chosen {
        let target_start = region.first_target + k;
        let hist_start = target_start - h;
        match spec.kind {
            AnomalyKind::Point => {
                for (ch, st) in stats.iter().enumerate() {
                    let idx = hist_start + rng.below(h);
                    let sign = if rng.unit_f64() < 0.5 { -1.0 } else { 1.0 };
                    out.values[idx * c + ch] = st.median + sign * spec.magnitude * st.iqr;
                }
            }
            AnomalyKind::Contextual => {
                let aligned: Vec<usize> = (hist_start..=target_start - day)
                    .filter(|&i| {
                        let t = &out.timestamps[i];
                        t.hour == 0 && t.minute == 0 && t.second == 0
                    })
                    .collect();
                let start = if aligned.is_empty() {
                    hist_start + rng.below(h - day + 1)
                } else {
                    aligned[rng.below(aligned.len())]
                };
                for ch in 0..c {
                    let mut mean = 0.0;
                    for i in start..start + day {
                        mean += out.values[i * c + ch];
                    }
                    mean /= day as f64;
                    for i in start..start + day {
                        let v = out.values[i * c + ch];
                        out.values[i * c + ch] = mean + spec.magnitude * (v - mean);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            "small.csv",
            "date,a,b\n2020-01-01 00:00:00,1.0,2.0\n2020-01-01 01:00:00,3.0,4.0\n2020-01-01 02:00:00,5.0,6.0\n",
        );
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.channel_count(), 2);
        assert_eq!(ds.value(1, 1), 4.0);
        assert_eq!(ds.channels, vec!["a", "b"]);
    }

    #[test]
    fn etth_format_file_roundtrip() {
        // ETTh1 geometry: 17420 hourly rows, 7 channels
        let profile = SynthProfile {
            channels: 7,
            noise_sigma: 0.2,
            ..SynthProfile::default()
        };
        let ds = synth_generate(17420, &profile).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(&dir, "etth1.csv", &to_csv_string(&ds));
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.len(), 17420);
        assert_eq!(loaded.channel_count(), 7);
        assert_eq!(loaded.values, ds.values);
        assert_eq!(loaded.timestamps, ds.timestamps);
    }

    #[test]
    fn out_of_order_row_names_line_3() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            "bad.csv",
            "date,a\n2020-01-02 00:00:00,1.0\n2020-01-01 00:00:00,2.0\n",
        );
        match load_csv(&path) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn ingestion_error_cases() {
        let dir = tempfile::tempdir().unwrap();
        let missing = write_csv(&dir, "m.csv", "time,a\n2020-01-01,1.0\n");
        assert!(matches!(
            load_csv(&missing),
            Err(Error::Ingestion { line: 1, .. })
        ));
        let nonnum = write_csv(&dir, "n.csv", "date,a\n2020-01-01 00:00:00,oops\n");
        assert!(matches!(
            load_csv(&nonnum),
            Err(Error::Ingestion { line: 2, .. })
        ));
        let nan = write_csv(&dir, "nan.csv", "date,a\n2020-01-01 00:00:00,NaN\n");
        assert!(matches!(
            load_csv(&nan),
            Err(Error::Ingestion { line: 2, .. })
        ));
    }

    fn toy_dataset(n: usize) -> Dataset {
        let profile = SynthProfile {
            channels: 2,
            noise_sigma: 0.0,
            ..SynthProfile::default()
        };
        synth_generate(n.max(168), &profile).unwrap().rows(0..n)
    }

    #[test]
    fn split_boundaries_floor_arithmetic() {
        let spec = SplitSpec::default();
        let ds = toy_dataset(100);
        let (tr, va, te) = chrono_split(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (60, 20, 20));

        let profile = SynthProfile {
            channels: 1,
            noise_sigma: 0.0,
            ..SynthProfile::default()
        };
        let big = synth_generate(17420, &profile).unwrap();
        let (tr, va, te) = chrono_split(&big, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (10452, 3484, 3484));

        let tiny = toy_dataset(10);
        let (tr, va, te) = chrono_split(&tiny, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));

        assert!(chrono_split(&toy_dataset(9), &spec).is_err());
    }

    #[test]
    fn no_leakage_test_follows_train() {
        let ds = toy_dataset(100);
        let (tr, _va, te) = chrono_split(&ds, &SplitSpec::default()).unwrap();
        let last_train = tr.timestamps.last().unwrap().epoch_seconds();
        assert!(te
            .timestamps
            .iter()
            .all(|t| t.epoch_seconds() > last_train));
    }

    #[test]
    fn standardize_uses_train_statistics_only() {
        let ds = toy_dataset(200);
        let (tr, va, mut te) = chrono_split(&ds, &SplitSpec::default()).unwrap();
        // inject a level shift into test; its standardized mean must be
        // clearly nonzero because the stats come from train
        for v in te.values.iter_mut() {
            *v += 100.0;
        }
        let (st_tr, _st_va, st_te, stats) = standardize(&tr, &va, &te).unwrap();
        let c = st_tr.channel_count();
        for ch in 0..c {
            let mean: f64 =
                (0..st_tr.len()).map(|i| st_tr.value(i, ch)).sum::<f64>() / st_tr.len() as f64;
            assert!(mean.abs() < 1e-9, "train mean {mean}");
            let var: f64 = (0..st_tr.len())
                .map(|i| st_tr.value(i, ch).powi(2))
                .sum::<f64>()
                / st_tr.len() as f64;
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "train std {}", var.sqrt());

            let te_mean: f64 =
                (0..st_te.len()).map(|i| st_te.value(i, ch)).sum::<f64>() / st_te.len() as f64;
            assert!(te_mean > 10.0, "test mean should reflect the shift");
            assert!(stats[ch].std > 0.0);
        }
    }

    #[test]
    fn constant_train_channel_standardizes_to_zero() {
        let mut ds = toy_dataset(100);
        for i in 0..ds.len() {
            let c = ds.channel_count();
            ds.values[i * c] = 5.0;
        }
        let (tr, va, te) = chrono_split(&ds, &SplitSpec::default()).unwrap();
        let (st_tr, ..) = standardize(&tr, &va, &te).unwrap();
        for i in 0..st_tr.len() {
            assert_eq!(st_tr.value(i, 0), 0.0);
        }
    }

    #[test]
    fn window_counts_and_adjacency() {
        let ds = toy_dataset(10);
        let windows = window_iter(&ds, 3, 2, 1, FeatureMode::Raw).unwrap();
        assert_eq!(windows.len(), 6);

        // first window: T features begin one step after S's last timestamp
        let w = &windows[0];
        let s_last_hour = w.s[2 * 6 + 3];
        let t_first_hour = w.t[3];
        assert_eq!(t_first_hour, (s_last_hour + 1.0) % 24.0);

        // ETTh1 test-split geometry at h=96, p=96
        let plan_len = 3484usize;
        assert_eq!(plan_len - (96 + 96) + 1, 3293);
        let seg = toy_dataset(3484);
        let plan = WindowPlan::new(&seg, 96, 96, FeatureMode::Raw).unwrap();
        assert_eq!(plan.count(), 3293);

        assert!(window_iter(&toy_dataset(4), 3, 2, 1, FeatureMode::Raw).is_err());
    }

    #[test]
    fn stride_one_windows_reconstruct_series() {
        let ds = toy_dataset(40);
        let c = ds.channel_count();
        let (h, p) = (5, 3);
        let windows = window_iter(&ds, h, p, 1, FeatureMode::Raw).unwrap();
        let mut rebuilt = vec![f64::NAN; ds.values.len()];
        for w in &windows {
            for i in 0..h {
                for ch in 0..c {
                    rebuilt[(w.start + i) * c + ch] = w.x[i * c + ch];
                }
            }
            for i in 0..p {
                for ch in 0..c {
                    rebuilt[(w.start + h + i) * c + ch] = w.y[i * c + ch];
                }
            }
        }
        assert_eq!(rebuilt, ds.values);
    }

    #[test]
    fn extend_with_history_prepends_rows() {
        let ds = toy_dataset(100);
        let (tr, va, _te) = chrono_split(&ds, &SplitSpec::default()).unwrap();
        let ext = extend_with_history(&tr, &va, 8);
        assert_eq!(ext.len(), va.len() + 8);
        assert_eq!(ext.timestamps[0], tr.timestamps[tr.len() - 8]);
        assert_eq!(ext.timestamps[8], va.timestamps[0]);
    }

    #[test]
    fn synth_is_periodic_without_noise() {
        let profile = SynthProfile {
            channels: 2,
            noise_sigma: 0.0,
            drift_per_step: 0.0,
            ..SynthProfile::default()
        };
        let ds = synth_generate(4 * 168, &profile).unwrap();
        let c = ds.channel_count();
        for i in 0..ds.len() - 168 {
            for ch in 0..c {
                assert_eq!(ds.value(i, ch), ds.value(i + 168, ch), "i={i} ch={ch}");
            }
        }
    }

    #[test]
    fn synth_same_seed_bit_identical() {
        let profile = SynthProfile::default();
        let a = synth_generate(512, &profile).unwrap();
        let b = synth_generate(512, &profile).unwrap();
        assert_eq!(a.values, b.values);
        let different = SynthProfile {
            seed: 2,
            ..profile
        };
        assert_ne!(synth_generate(512, &different).unwrap().values, a.values);
    }

    #[test]
    fn weekday_swing_exceeds_weekend_swing() {
        let profile = SynthProfile {
            noise_sigma: 0.05,
            ..SynthProfile::default()
        };
        let ds = synth_generate(4 * 168, &profile).unwrap();
        let c = ds.channel_count();
        let mut wd = (0.0, 0usize);
        let mut we = (0.0, 0usize);
        for (i, ts) in ds.timestamps.iter().enumerate() {
            for ch in 0..c {
                let dev = (ds.value(i, ch) - profile.base_level).abs();
                if ts.weekday() < 5 {
                    wd = (wd.0 + dev, wd.1 + 1);
                } else {
                    we = (we.0 + dev, we.1 + 1);
                }
            }
        }
        let wd_mean = wd.0 / wd.1 as f64;
        let we_mean = we.0 / we.1 as f64;
        assert!(
            wd_mean > we_mean * 1.5,
            "weekday {wd_mean} vs weekend {we_mean}"
        );
    }

    #[test]
    fn synth_requires_a_full_week() {
        assert!(synth_generate(100, &SynthProfile::default()).is_err());
    }

    #[test]
    fn zero_rate_injection_is_identity() {
        let ds = toy_dataset(300);
        let spec = AnomalySpec {
            kind: AnomalyKind::Point,
            rate: 0.0,
            magnitude: 8.0,
            seed: 3,
        };
        let region = TestRegion {
            first_target: 200,
            history: 48,
            horizon: 24,
        };
        let out = inject_anomalies(&ds, &spec, &region).unwrap();
        assert_eq!(out.values, ds.values);
        assert_eq!(out.timestamps, ds.timestamps);
    }

    #[test]
    fn point_injection_lands_beyond_iqr_multiple() {
        let ds = toy_dataset(400);
        let stats = robust_channel_stats(&ds);
        let spec = AnomalySpec {
            kind: AnomalyKind::Point,
            rate: 0.5,
            magnitude: 8.0,
            seed: 4,
        };
        let region = TestRegion {
            first_target: 300,
            history: 48,
            horizon: 24,
        };
        let out = inject_anomalies(&ds, &spec, &region).unwrap();
        let c = ds.channel_count();
        let mut changed = 0;
        for i in 0..ds.len() {
            for ch in 0..c {
                let (old, new) = (ds.value(i, ch), out.value(i, ch));
                if old != new {
                    changed += 1;
                    let dev = (new - stats[ch].median).abs();
                    assert!(
                        dev >= 8.0 * stats[ch].iqr - 1e-12,
                        "point anomaly too mild: {dev} vs {}",
                        8.0 * stats[ch].iqr
                    );
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn contextual_injection_suppresses_weekday_to_weekend_amplitude() {
        let profile = SynthProfile {
            channels: 1,
            noise_sigma: 0.0,
            ..SynthProfile::default()
        };
        let ds = synth_generate(3 * 168, &profile).unwrap();
        let factor = profile.weekend_amplitude / profile.weekday_amplitude;
        let plan = WindowPlan::new(&ds, 96, 24, FeatureMode::Raw).unwrap();
        let mut windows: Vec<Window> = plan.iter(1).collect();
        let stats = robust_channel_stats(&ds);
        let spec = AnomalySpec {
            kind: AnomalyKind::Contextual,
            rate: 1.0,
            magnitude: factor,
            seed: 5,
        };
        let touched =
            pollute_windows(&mut windows, &[spec], &stats, ds.points_per_day()).unwrap();
        assert_eq!(touched.len(), windows.len());

        // locate each window's rescaled day and verify the suppression:
        // (polluted - day mean) = factor · (clean - day mean), so an affected
        // weekday's sinusoid amplitude becomes exactly the weekend amplitude
        let mut weekday_days_checked = 0;
        for w in &windows {
            let clean = plan.window_at(w.start);
            let changed: Vec<usize> = (0..96).filter(|&i| w.x[i] != clean.x[i]).collect();
            let Some(&first) = changed.first() else {
                continue;
            };
            assert!(changed.len() <= 24, "at most one day rescaled");
            if w.s[first * 6 + 2] >= 5.0 {
                continue; // the polluted day was a weekend day
            }
            let day = first..first + 24;
            let mu: f64 = day.clone().map(|i| clean.x[i]).sum::<f64>() / 24.0;
            for i in day {
                let expected = mu + factor * (clean.x[i] - mu);
                assert!((w.x[i] - expected).abs() < 1e-9);
                // recovered amplitude: clean dev times factor equals the
                // weekend-amplitude sinusoid's deviation
                let clean_dev = clean.x[i] - mu;
                let polluted_dev = w.x[i] - mu;
                assert!(
                    (polluted_dev - clean_dev / profile.weekday_amplitude
                        * profile.weekend_amplitude)
                        .abs()
                        < 1e-9
                );
            }
            weekday_days_checked += 1;
        }
        assert!(weekday_days_checked > 0, "no suppressed weekday found");
    }

    #[test]
    fn pollution_preserves_targets() {
        let ds = toy_dataset(300);
        let plan = WindowPlan::new(&ds, 48, 24, FeatureMode::Raw).unwrap();
        let mut windows: Vec<Window> = plan.iter(1).collect();
        let targets_before: Vec<Vec<f64>> = windows.iter().map(|w| w.y.clone()).collect();
        let stats = robust_channel_stats(&ds);
        let specs = [
            AnomalySpec {
                kind: AnomalyKind::Point,
                rate: 0.3,
                magnitude: 8.0,
                seed: 6,
            },
            AnomalySpec {
                kind: AnomalyKind::Contextual,
                rate: 0.3,
                magnitude: 0.4,
                seed: 7,
            },
        ];
        let touched =
            pollute_windows(&mut windows, &specs, &stats, ds.points_per_day()).unwrap();
        assert!(!touched.is_empty());
        for (w, before) in windows.iter().zip(&targets_before) {
            assert_eq!(&w.y, before);
        }
    }

    #[test]
    fn anomaly_spec_parsing() {
        let spec = AnomalySpec::parse("point:0.1:8").unwrap();
        assert_eq!(spec.kind, AnomalyKind::Point);
        assert_eq!(spec.rate, 0.1);
        assert_eq!(spec.magnitude, 8.0);
        assert_eq!(spec.seed, 0);

        let list = AnomalySpec::parse_list("point:0.1:8,contextual:0.2:0.4:9").unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list[1].seed, 9);

        assert!(AnomalySpec::parse("spike:0.1:8").is_err());
        assert!(AnomalySpec::parse("point:1.5:8").is_err());
        assert!(AnomalySpec::parse("point:0.1").is_err());
    }
}
