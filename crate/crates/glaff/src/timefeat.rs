//! Timestamp parsing and the 6-dimensional feature vectors that carry the
//! global (calendar) information: `[month, day, weekday, hour, minute,
//! second]` with Monday = 0. For 2018-06-02 12:00:00 (a Saturday) the vector
//! is `[6, 2, 5, 12, 0, 0]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A calendar timestamp in the proleptic Gregorian calendar, no timezone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    pub year: i32,
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    pub minute: u8,
    pub second: u8,
}

/// How calendar components are presented to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Raw integer components, as printed in the dataset.
    #[default]
    Raw,
    /// Each component mapped affinely to [-0.5, 0.5] by its calendar range.
    Scaled,
}

impl FeatureMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(FeatureMode::Raw),
            "scaled" => Ok(FeatureMode::Scaled),
            other => Err(Error::Config(format!(
                "unknown feature mode '{other}' (expected raw|scaled)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureMode::Raw => "raw",
            FeatureMode::Scaled => "scaled",
        }
    }
}

fn is_leap(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

fn days_in_month(year: i32, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if is_leap(year) {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

/// Days since 1970-01-01 (may be negative). Hinnant's civil-days algorithm.
fn days_from_civil(year: i32, month: u8, day: u8) -> i64 {
    let y = i64::from(year) - i64::from(month <= 2);
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400; // [0, 399]
    let m = i64::from(month);
    let d = i64::from(day);
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + d - 1; // [0, 365]
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy; // [0, 146096]
    era * 146_097 + doe - 719_468
}

/// Inverse of `days_from_civil`.
fn civil_from_days(z: i64) -> (i32, u8, u8) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097; // [0, 146096]
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146_096) / 365; // [0, 399]
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100); // [0, 365]
    let mp = (5 * doy + 2) / 153; // [0, 11]
    let d = doy - (153 * mp + 2) / 5 + 1; // [1, 31]
    let m = if mp < 10 { mp + 3 } else { mp - 9 }; // [1, 12]
    ((y + i64::from(m <= 2)) as i32, m as u8, d as u8)
}

impl Timestamp {
    pub fn new(year: i32, month: u8, day: u8, hour: u8, minute: u8, second: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Parse(format!("month {month} out of range")));
        }
        if day < 1 || day > days_in_month(year, month) {
            return Err(Error::Parse(format!(
                "invalid calendar date {year:04}-{month:02}-{day:02}"
            )));
        }
        if hour > 23 || minute > 59 || second > 59 {
            return Err(Error::Parse(format!(
                "invalid time {hour:02}:{minute:02}:{second:02}"
            )));
        }
        Ok(Self {
            year,
            month,
            day,
            hour,
            minute,
            second,
        })
    }

    /// Seconds since 1970-01-01 00:00:00.
    pub fn epoch_seconds(&self) -> i64 {
        days_from_civil(self.year, self.month, self.day) * 86_400
            + i64::from(self.hour) * 3600
            + i64::from(self.minute) * 60
            + i64::from(self.second)
    }

    pub fn from_epoch_seconds(total: i64) -> Self {
        let days = total.div_euclid(86_400);
        let secs = total.rem_euclid(86_400);
        let (year, month, day) = civil_from_days(days);
        Self {
            year,
            month,
            day,
            hour: (secs / 3600) as u8,
            minute: (secs % 3600 / 60) as u8,
            second: (secs % 60) as u8,
        }
    }

    pub fn add_minutes(&self, minutes: i64) -> Self {
        Self::from_epoch_seconds(self.epoch_seconds() + minutes * 60)
    }

    /// Weekday with Monday = 0 ... Sunday = 6.
    pub fn weekday(&self) -> u8 {
        // 1970-01-01 was a Thursday (= 3 in Monday-origin numbering).
        (days_from_civil(self.year, self.month, self.day) + 3).rem_euclid(7) as u8
    }

    pub fn format(&self) -> String {
        format!(
            "{:04}-{:02}-{:02} {:02}:{:02}:{:02}",
            self.year, self.month, self.day, self.hour, self.minute, self.second
        )
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.format())
    }
}

/// Parse "YYYY-MM-DD HH:MM:SS" or "YYYY-MM-DD" (time defaults to 00:00:00).
pub fn parse_timestamp(text: &str) -> Result<Timestamp> {
    let bad = |why: &str| Error::Parse(format!("bad timestamp '{text}': {why}"));
    let text = text.trim();
    let (date, time) = match text.split_once(' ') {
        Some((d, t)) => (d, Some(t)),
        None => (text, None),
    };
    let mut dp = date.split('-');
    let year: i32 = dp
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("year"))?;
    let month: u8 = dp
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("month"))?;
    let day: u8 = dp
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("day"))?;
    if dp.next().is_some() {
        return Err(bad("trailing date fields"));
    }
    let (hour, minute, second) = match time {
        None => (0, 0, 0),
        Some(t) => {
            let mut tp = t.split(':');
            let h: u8 = tp
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("hour"))?;
            let m: u8 = tp
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("minute"))?;
            let s: u8 = tp
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("second"))?;
            if tp.next().is_some() {
                return Err(bad("trailing time fields"));
            }
            (h, m, s)
        }
    };
    Timestamp::new(year, month, day, hour, minute, second)
}

/// The 6-vector [month, day, weekday, hour, minute, second].
pub fn extract_features(ts: &Timestamp) -> [f64; 6] {
    [
        f64::from(ts.month),
        f64::from(ts.day),
        f64::from(ts.weekday()),
        f64::from(ts.hour),
        f64::from(ts.minute),
        f64::from(ts.second),
    ]
}

fn scale_features(raw: [f64; 6]) -> [f64; 6] {
    [
        (raw[0] - 1.0) / 11.0 - 0.5,
        (raw[1] - 1.0) / 30.0 - 0.5,
        raw[2] / 6.0 - 0.5,
        raw[3] / 23.0 - 0.5,
        raw[4] / 59.0 - 0.5,
        raw[5] / 59.0 - 0.5,
    ]
}

/// Stack per-timestamp features into an [n, 6] tensor.
pub fn featurize_window(timestamps: &[Timestamp], mode: FeatureMode) -> Tensor {
    let mut data = Vec::with_capacity(timestamps.len() * 6);
    for ts in timestamps {
        let raw = extract_features(ts);
        let row = match mode {
            FeatureMode::Raw => raw,
            FeatureMode::Scaled => scale_features(raw),
        };
        data.extend_from_slice(&row);
    }
    Tensor::constant(vec![timestamps.len(), 6], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn parses_paper_example() {
        let ts = parse_timestamp("2018-06-02 12:00:00").unwrap();
        assert_eq!(ts, Timestamp::new(2018, 6, 2, 12, 0, 0).unwrap());
        assert_eq!(extract_features(&ts), [6.0, 2.0, 5.0, 12.0, 0.0, 0.0]);
    }

    #[test]
    fn date_only_defaults_to_midnight_and_leap_day_is_valid() {
        let ts = parse_timestamp("2020-02-29").unwrap();
        assert_eq!((ts.hour, ts.minute, ts.second), (0, 0, 0));
    }

    #[test]
    fn invalid_calendar_date_rejected() {
        assert!(matches!(
            parse_timestamp("2019-02-29 00:00:00"),
            Err(Error::Parse(_))
        ));
        assert!(parse_timestamp("2019-13-01").is_err());
        assert!(parse_timestamp("2019-00-01").is_err());
        assert!(parse_timestamp("junk").is_err());
        assert!(parse_timestamp("2019-01-01 24:00:00").is_err());
    }

    #[test]
    fn known_weekdays() {
        // Jan 1 2020 was a Wednesday, Jul 4 2016 a Monday.
        let w = parse_timestamp("2020-01-01 00:00:00").unwrap();
        assert_eq!(extract_features(&w), [1.0, 1.0, 2.0, 0.0, 0.0, 0.0]);
        let m = parse_timestamp("2016-07-04 13:30:00").unwrap();
        assert_eq!(extract_features(&m), [7.0, 4.0, 0.0, 13.0, 30.0, 0.0]);
    }

    #[test]
    fn weekday_advances_by_one_per_day() {
        // Property check over random dates against the day-count oracle.
        let mut rng = DetRng::new(11);
        for _ in 0..500 {
            let year = 1900 + rng.below(250) as i32;
            let month = 1 + rng.below(12) as u8;
            let day = 1 + rng.below(days_in_month(year, month) as usize) as u8;
            let ts = Timestamp::new(year, month, day, 0, 0, 0).unwrap();
            let next = ts.add_minutes(24 * 60);
            assert_eq!(next.weekday(), (ts.weekday() + 1) % 7, "after {ts}");
        }
    }

    #[test]
    fn epoch_roundtrip_random_dates() {
        let mut rng = DetRng::new(5);
        for _ in 0..500 {
            let secs = rng.next_u64() as i64 % 10_000_000_000;
            let ts = Timestamp::from_epoch_seconds(secs);
            assert_eq!(ts.epoch_seconds(), secs);
            assert_eq!(parse_timestamp(&ts.format()).unwrap(), ts);
        }
    }

    #[test]
    fn featurize_raw_matches_paper_row() {
        let ts = parse_timestamp("2018-06-02 12:00:00").unwrap();
        let t = featurize_window(&[ts], FeatureMode::Raw);
        assert_eq!(t.shape(), &[1, 6]);
        assert_eq!(t.data(), &[6.0, 2.0, 5.0, 12.0, 0.0, 0.0]);
    }

    #[test]
    fn scaled_endpoints_and_roundtrip() {
        let ts = parse_timestamp("2018-06-02 12:00:00").unwrap();
        let t = featurize_window(&[ts], FeatureMode::Scaled);
        // second = 0 sits at the lower end of its range
        assert_eq!(t.data()[5], -0.5);

        // invert the affine maps and recover the raw components
        let raw = extract_features(&ts);
        let s = t.data();
        let ranges = [11.0, 30.0, 6.0, 23.0, 59.0, 59.0];
        let offsets = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for i in 0..6 {
            let recovered = (s[i] + 0.5) * ranges[i] + offsets[i];
            assert!((recovered - raw[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_timestamps_equal_features() {
        let a = parse_timestamp("2001-02-03 04:05:06").unwrap();
        let b = parse_timestamp("2001-02-03 04:05:06").unwrap();
        assert_eq!(extract_features(&a), extract_features(&b));
    }
}
