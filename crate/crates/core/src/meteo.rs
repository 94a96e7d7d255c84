//! Mean wind records and prescribed turbulence statistics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Measurement heights of the Copenhagen wind profile (m).
pub const COPENHAGEN_HEIGHTS: [f64; 3] = [10.0, 120.0, 200.0];

/// Bundled copy of the Copenhagen 19/10/1978 ten-minute wind averages.
pub const COPENHAGEN_TABLE: &str = include_str!("../data/copenhagen.csv");

/// Default validity of one wind record (s).
pub const DEFAULT_RECORD_PERIOD: f64 = 600.0;

/// One time-averaged wind profile.
#[derive(Debug, Clone, PartialEq)]
pub struct WindRecord {
    pub time_label: String,
    /// Minutes after midnight, used for ordering.
    pub minutes: u32,
    /// Mean speed per height (m/s).
    pub speeds: Vec<f64>,
    /// Direction the wind blows from, degrees clockwise from north.
    pub directions: Vec<f64>,
    pub heights: Vec<f64>,
}

impl WindRecord {
    fn profile_at(&self, z: f64) -> (f64, f64) {
        let h = &self.heights;
        let last = h.len() - 1;
        if z <= h[0] {
            return (self.speeds[0], self.directions[0]);
        }
        if z >= h[last] {
            return (self.speeds[last], self.directions[last]);
        }
        let k = h.partition_point(|&hk| hk <= z) - 1;
        let frac = (z.ln() - h[k].ln()) / (h[k + 1].ln() - h[k].ln());
        let speed = self.speeds[k] + frac * (self.speeds[k + 1] - self.speeds[k]);
        let dir = interpolate_direction(self.directions[k], self.directions[k + 1], frac);
        (speed, dir)
    }
}

/// Interpolates between two bearings along the shorter arc. Result in [0, 360).
pub fn interpolate_direction(from: f64, to: f64, frac: f64) -> f64 {
    let arc = (to - from + 540.0).rem_euclid(360.0) - 180.0;
    (from + frac * arc).rem_euclid(360.0)
}

/// Horizontal wind components for a meteorological (blowing-from) bearing.
pub fn wind_components(speed: f64, direction_deg: f64) -> [f64; 3] {
    let rad = direction_deg.to_radians();
    [-speed * rad.sin(), -speed * rad.cos(), 0.0]
}

fn check_heights(heights: &[f64]) -> Result<()> {
    if heights.is_empty() {
        return Err(Error::validation("at least one measurement height is required"));
    }
    if heights.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::validation("measurement heights must be positive"));
    }
    if heights.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("measurement heights must be strictly increasing"));
    }
    Ok(())
}

fn parse_clock(field: &str, row: usize) -> Result<u32> {
    let bad = || Error::Parse {
        row,
        column: 1,
        message: format!("expected a clock time h:m, found {field:?}"),
    };
    let (h, m) = field.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    let m: u32 = m.trim().parse().map_err(|_| bad())?;
    if h >= 24 || m >= 60 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

fn split_row(line: &str) -> Vec<String> {
    if line.contains(';') {
        line.split(';').map(|f| f.trim().replace(',', ".")).collect()
    } else if line.contains('\t') {
        line.split('\t').map(|f| f.trim().replace(',', ".")).collect()
    } else {
        line.split(',').map(|f| f.trim().to_string()).collect()
    }
}

/// Parses a wind table with columns `time, speed@h1..hn, dir@h1..hn`.
///
/// Semicolon- or tab-delimited rows may use decimal commas; comma-delimited
/// rows must use decimal points. `#` lines and a leading textual header row
/// are skipped. Records are returned sorted by clock time.
pub fn load_meteorology(text: &str, heights: &[f64]) -> Result<Vec<WindRecord>> {
    check_heights(heights)?;
    let n = heights.len();
    let mut records = Vec::new();
    for (idx, (row, line)) in crate::textio::data_lines(text).enumerate() {
        let fields = split_row(line);
        if idx == 0 && fields[0].chars().any(|c| c.is_ascii_alphabetic()) {
            continue;
        }
        if fields.len() != 1 + 2 * n {
            return Err(Error::Parse {
                row,
                column: fields.len().min(1 + 2 * n) + 1,
                message: format!("expected {} columns, found {}", 1 + 2 * n, fields.len()),
            });
        }
        let minutes = parse_clock(&fields[0], row)?;
        let mut values = Vec::with_capacity(2 * n);
        for (c, f) in fields[1..].iter().enumerate() {
            values.push(crate::textio::parse_f64(f, row, c + 2)?);
        }
        let (speeds, directions) = values.split_at(n);
        if let Some(s) = speeds.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::validation(format!("row {row}: negative or invalid speed {s}")));
        }
        let mut dirs = Vec::with_capacity(n);
        for d in directions {
            if !(0.0..=360.0).contains(d) {
                return Err(Error::validation(format!(
                    "row {row}: direction {d} outside [0, 360)"
                )));
            }
            dirs.push(d.rem_euclid(360.0));
        }
        records.push(WindRecord {
            time_label: fields[0].clone(),
            minutes,
            speeds: speeds.to_vec(),
            directions: dirs,
            heights: heights.to_vec(),
        });
    }
    records.sort_by_key(|r| r.minutes);
    Ok(records)
}

/// Time series of wind records, each governing a fixed period in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Meteorology {
    records: Vec<WindRecord>,
    period: f64,
}

impl Meteorology {
    pub fn new(records: Vec<WindRecord>, period: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::validation("meteorology needs at least one wind record"));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::validation("record period must be positive"));
        }
        for r in &records {
            check_heights(&r.heights)?;
            if r.speeds.len() != r.heights.len() || r.directions.len() != r.heights.len() {
                return Err(Error::validation("speeds, directions and heights differ in length"));
            }
        }
        Ok(Self { records, period })
    }

    /// Bundled Copenhagen table with ten-minute records.
    pub fn copenhagen() -> Self {
        let records = load_meteorology(COPENHAGEN_TABLE, &COPENHAGEN_HEIGHTS)
            .expect("bundled table is valid");
        Self::new(records, DEFAULT_RECORD_PERIOD).expect("bundled table is valid")
    }

    /// Uniform wind at all heights and times; handy for controlled experiments.
    pub fn uniform(speed: f64, direction_deg: f64) -> Result<Self> {
        let rec = WindRecord {
            time_label: "00:00".into(),
            minutes: 0,
            speeds: vec![speed],
            directions: vec![direction_deg.rem_euclid(360.0)],
            heights: vec![10.0],
        };
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(Error::validation("speed must be non-negative"));
        }
        Self::new(vec![rec], DEFAULT_RECORD_PERIOD)
    }

    pub fn records(&self) -> &[WindRecord] {
        &self.records
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Total time covered by the records (s).
    pub fn span(&self) -> f64 {
        self.period * self.records.len() as f64
    }

    /// Record in force at elapsed time `t`; the last record persists past the end.
    pub fn record_at(&self, t: f64) -> &WindRecord {
        let k = (t / self.period).floor().max(0.0) as usize;
        &self.records[k.min(self.records.len() - 1)]
    }

    /// Interpolated scalar speed and bearing at height `z` and time `t`.
    pub fn speed_direction_at(&self, z: f64, t: f64) -> Result<(f64, f64)> {
        if !(z > 0.0) {
            return Err(Error::domain(format!("height must be positive, got {z}")));
        }
        Ok(self.record_at(t).profile_at(z))
    }

    /// Mean wind vector `(u, v, w)` (m/s); `w` is always zero.
    pub fn mean_wind_at(&self, z: f64, t: f64) -> Result<[f64; 3]> {
        let (speed, dir) = self.speed_direction_at(z, t)?;
        Ok(wind_components(speed, dir))
    }
}

/// Homogeneous, stationary turbulence statistics for the u, v, w components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceParams {
    /// Velocity variance per component (m²/s²).
    pub sigma2: [f64; 3],
    /// Lagrangian decorrelation time per component (s).
    pub tau_l: [f64; 3],
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            sigma2: [0.5, 0.5, 0.25],
            tau_l: [100.0, 100.0, 50.0],
        }
    }
}

impl TurbulenceParams {
    pub fn new(sigma2: [f64; 3], tau_l: [f64; 3]) -> Result<Self> {
        let p = Self { sigma2, tau_l };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma2.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::validation("velocity variances must be non-negative"));
        }
        if self.tau_l.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::validation("Lagrangian time scales must be positive"));
        }
        Ok(())
    }

    /// Statistics at height `z`. The field is homogeneous, so this is `self`.
    pub fn at(&self, _z: f64) -> TurbulenceParams {
        *self
    }

    pub fn min_tau(&self) -> f64 {
        self.tau_l.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sigma(&self) -> [f64; 3] {
        self.sigma2.map(f64::sqrt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn parses_decimal_comma_row() {
        let recs = load_meteorology("12:05; 2,6; 5,7; 5,7; 290; 310; 310", &COPENHAGEN_HEIGHTS).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].speeds, vec![2.6, 5.7, 5.7]);
        assert_eq!(recs[0].directions, vec![290.0, 310.0, 310.0]);
        assert_eq!(recs[0].time_label, "12:05");
    }

    #[test]
    fn comma_delimited_with_header() {
        let text = "time,s10,s120,s200,d10,d120,d200\n12:15,2.6,5.1,5.7,300,310,310\n";
        let recs = load_meteorology(text, &COPENHAGEN_HEIGHTS).unwrap();
        assert_eq!(recs[0].speeds, vec![2.6, 5.1, 5.7]);
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(load_meteorology("", &COPENHAGEN_HEIGHTS).unwrap().is_empty());
    }

    #[test]
    fn negative_speed_rejected() {
        let err = load_meteorology("12:05; -1; 5,7; 5,7; 290; 310; 310", &COPENHAGEN_HEIGHTS).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_cell_names_row_and_column() {
        let text = "12:05; 2,6; 5,7; 5,7; 290; 310; 310\n12:15; 2,6; x; 5,7; 300; 310; 310\n";
        match load_meteorology(text, &COPENHAGEN_HEIGHTS).unwrap_err() {
            Error::Parse { row: 2, column: 3, .. } => {}
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_increasing_heights_rejected() {
        let err = load_meteorology("", &[10.0, 10.0, 200.0]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn records_sorted_by_time() {
        let text = "12:15; 1; 1; 1; 0; 0; 0\n12:05; 2; 2; 2; 0; 0; 0\n";
        let recs = load_meteorology(text, &COPENHAGEN_HEIGHTS).unwrap();
        assert_eq!(recs[0].time_label, "12:05");
    }

    #[test]
    fn bundled_table_matches_source() {
        let met = Meteorology::copenhagen();
        assert_eq!(met.records().len(), 5);
        assert_eq!(met.records()[2].speeds, vec![2.1, 4.6, 5.1]);
        assert_eq!(met.records()[2].directions, vec![280.0, 310.0, 320.0]);
    }

    #[test]
    fn ten_metre_wind_first_period() {
        let met = Meteorology::copenhagen();
        let [u, v, w] = met.mean_wind_at(10.0, 30.0).unwrap();
        // -2.6 sin(290°), -2.6 cos(290°)
        assert_relative_eq!(u, 2.443_200_814_043_361_6, epsilon = 1e-12);
        assert_relative_eq!(v, -0.889_252_372_646_739_4, epsilon = 1e-12);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn nodes_and_clamping() {
        let met = Meteorology::copenhagen();
        assert_eq!(met.speed_direction_at(120.0, 0.0).unwrap(), (5.7, 310.0));
        assert_eq!(met.speed_direction_at(200.0, 1000.0).unwrap(), (5.7, 310.0));
        assert_eq!(met.speed_direction_at(900.0, 1300.0).unwrap(), (5.1, 320.0));
        assert_eq!(met.speed_direction_at(2.0, 0.0).unwrap(), (2.6, 290.0));
    }

    #[test]
    fn periods_are_piecewise_constant() {
        let met = Meteorology::copenhagen();
        assert_eq!(met.record_at(0.0).time_label, "12:05");
        assert_eq!(met.record_at(599.9).time_label, "12:05");
        assert_eq!(met.record_at(600.0).time_label, "12:15");
        assert_eq!(met.record_at(1e6).time_label, "12:45");
    }

    #[test]
    fn non_positive_height_is_domain_error() {
        let met = Meteorology::copenhagen();
        assert!(matches!(met.mean_wind_at(0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(met.mean_wind_at(-3.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn direction_uses_short_arc() {
        assert_relative_eq!(interpolate_direction(350.0, 10.0, 0.5), 0.0, epsilon = 1e-12);
        assert_relative_eq!(interpolate_direction(10.0, 350.0, 0.25), 5.0, epsilon = 1e-12);
        assert_relative_eq!(interpolate_direction(290.0, 310.0, 0.5), 300.0, epsilon = 1e-12);
    }

    #[test]
    fn log_height_interpolation() {
        let met = Meteorology::copenhagen();
        let z = (10.0f64 * 120.0).sqrt();
        let (s, d) = met.speed_direction_at(z, 0.0).unwrap();
        assert_relative_eq!(s, 0.5 * (2.6 + 5.7), epsilon = 1e-12);
        assert_relative_eq!(d, 300.0, epsilon = 1e-12);
    }

    #[test]
    fn turbulence_is_homogeneous() {
        let p = TurbulenceParams::new([0.5, 0.5, 0.25], [100.0, 100.0, 50.0]).unwrap();
        assert_eq!(p.at(10.0), p);
        assert_eq!(p.at(500.0), p);
        assert!(TurbulenceParams::new([-0.1, 0.5, 0.25], [100.0, 100.0, 50.0]).is_err());
        assert!(TurbulenceParams::new([0.1, 0.5, 0.25], [100.0, 0.0, 50.0]).is_err());
    }

    proptest! {
        #[test]
        fn component_magnitude_matches_speed(z in 0.5f64..2000.0, t in 0.0f64..4000.0) {
            let met = Meteorology::copenhagen();
            let (s, _) = met.speed_direction_at(z, t).unwrap();
            let [u, v, _] = met.mean_wind_at(z, t).unwrap();
            let mag = (u * u + v * v).sqrt();
            prop_assert!((mag - s).abs() <= 1e-12 * s.max(1e-300));
        }

        #[test]
        fn profile_is_continuous(z in 1.0f64..400.0, t in 0.0f64..3000.0) {
            let met = Meteorology::copenhagen();
            let a = met.mean_wind_at(z, t).unwrap();
            let b = met.mean_wind_at(z * (1.0 + 1e-9), t).unwrap();
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn short_arc_never_exceeds_half_turn(a in 0.0f64..360.0, b in 0.0f64..360.0, f in 0.0f64..1.0) {
            let d = interpolate_direction(a, b, f);
            let arc = |x: f64, y: f64| { let r = (x - y).rem_euclid(360.0); r.min(360.0 - r) };
            prop_assert!(arc(a, d) + arc(d, b) <= arc(a, b) + 1e-9);
        }
    }
}
