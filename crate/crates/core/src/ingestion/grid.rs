use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::raw::Measurement;

/// Hourly grid of averaged measurements; `None` marks an unobserved hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyGrid {
    pub hours: usize,
    pub cells: BTreeMap<String, Vec<Option<f64>>>,
}

impl HourlyGrid {
    pub fn empty(hours: usize) -> Self {
        Self { hours, cells: BTreeMap::new() }
    }

    pub fn get(&self, feature: &str, hour: usize) -> Option<f64> {
        self.cells.get(feature).and_then(|v| v.get(hour).copied().flatten())
    }

    /// Observed `(hour, value)` pairs for one feature.
    pub fn observed<'a>(&'a self, feature: &str) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.cells
            .get(feature)
            .into_iter()
            .flat_map(|v| v.iter().enumerate().filter_map(|(h, x)| x.map(|x| (h, x))))
    }
}

/// Hour bucket of an offset: nearest hour, ties (x.5) away from zero.
pub fn hour_bucket(hour_offset: f64) -> f64 {
    hour_offset.round()
}

/// Rounds each measurement to the nearest hour and averages collisions.
/// Hours outside `[0, window_hours)` are dropped.
pub fn bin_hourly(measurements: &[Measurement], window_hours: usize) -> HourlyGrid {
    let mut sums: BTreeMap<&str, Vec<(f64, u32)>> = BTreeMap::new();
    for m in measurements {
        let h = hour_bucket(m.hour_offset);
        if !(h >= 0.0 && h < window_hours as f64) {
            continue;
        }
        let slot = sums
            .entry(m.feature.as_str())
            .or_insert_with(|| vec![(0.0, 0); window_hours]);
        let cell = &mut slot[h as usize];
        cell.0 += m.value;
        cell.1 += 1;
    }
    let cells = sums
        .into_iter()
        .map(|(f, v)| {
            let vals = v
                .into_iter()
                .map(|(s, n)| (n > 0).then(|| s / n as f64))
                .collect();
            (f.to_string(), vals)
        })
        .collect();
    HourlyGrid { hours: window_hours, cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(t: f64, v: f64) -> Measurement {
        Measurement { hour_offset: t, feature: "heart_rate".into(), value: v }
    }

    #[test]
    fn rounding_and_averaging() {
        let g = bin_hourly(&[m(3.2, 2.0), m(2.8, 4.0)], 24);
        assert_eq!(g.get("heart_rate", 3), Some(3.0));
        assert_eq!(g.get("heart_rate", 2), None);
    }

    #[test]
    fn single_value_identity() {
        let g = bin_hourly(&[m(0.4, 5.0)], 24);
        assert_eq!(g.get("heart_rate", 0), Some(5.0));
    }

    #[test]
    fn late_value_dropped() {
        let g = bin_hourly(&[m(23.6, 1.0), m(23.4, 2.0)], 24);
        assert_eq!(g.get("heart_rate", 23), Some(2.0));
        assert_eq!(g.observed("heart_rate").count(), 1);
    }

    #[test]
    fn empty_grid() {
        let g = bin_hourly(&[], 24);
        assert!(g.cells.is_empty());
        assert_eq!(g.hours, 24);
    }

    /// Scalar reference: hour index of `t` by explicit floor(t + 1/2) for t >= 0.
    fn reference_hour(t: f64, window: usize) -> Option<usize> {
        let h = (t + 0.5).floor();
        (h < window as f64).then_some(h as usize)
    }

    #[test]
    fn rounding_edges_match_scalar_reference() {
        // Offsets on a 0.05 h lattice including every x.5 tie, up to window + 0.5.
        for window in [1usize, 2, 24, 48] {
            for k in 0..=((window as u32) * 20 + 10) {
                let t = f64::from(k) * 0.05;
                let t = (t * 100.0).round() / 100.0;
                let g = bin_hourly(&[m(t, 1.0)], window);
                let got: Vec<usize> = g.observed("heart_rate").map(|(h, _)| h).collect();
                let want: Vec<usize> = reference_hour(t, window).into_iter().collect();
                assert_eq!(got, want, "t = {t}, window = {window}");
            }
        }
    }
}
