//! Dataset ingestion, preprocessing, label construction, and the seeded
//! synthetic generator that stands in for the non-distributable raw sources.

mod csvio;
mod synth;

pub use csvio::{load_dataset, load_station_file, DataPaths};
pub use synth::{generate_synthetic, generate_synthetic_records, GroundTruth, SyntheticData};

use crate::error::{Error, Result};
use crate::graph::{DailyGraph, Edge, StationSet, HOUSEHOLD_DIM, LANDUSE_DIM, N_CLASSES};
use chrono::{Datelike, NaiveDate, Weekday as ChronoWeekday};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Days kept by the outlier filter carry at least this many trip records.
pub const MIN_DAILY_TRIPS: u64 = 5_000;
/// Days kept by the outlier filter carry at most this many trip records.
pub const MAX_DAILY_TRIPS: u64 = 30_000;

/// One pre-aggregated trip record: `count` trips between two stations on a
/// date (same-station records are allowed and carry `origin == destination`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrip {
    pub date: NaiveDate,
    pub origin: usize,
    pub destination: usize,
    pub count: u32,
}

/// One day of weather observations, raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    pub date: NaiveDate,
    pub precipitation_mm: f64,
    pub cloud_cover_fraction: f64,
    pub temp_mean: f64,
    pub temp_max: f64,
    pub temp_min: f64,
}

impl WeatherDay {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.precipitation_mm,
            self.cloud_cover_fraction,
            self.temp_mean,
            self.temp_max,
            self.temp_min,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(format!(
                "non-finite weather fields on {}",
                self.date
            )));
        }
        if self.precipitation_mm < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative precipitation on {}",
                self.date
            )));
        }
        if !(0.0..=1.0).contains(&self.cloud_cover_fraction) {
            return Err(Error::InvalidArgument(format!(
                "cloud cover must be a fraction in [0, 1] on {}",
                self.date
            )));
        }
        if !(self.temp_min <= self.temp_mean && self.temp_mean <= self.temp_max) {
            return Err(Error::InvalidArgument(format!(
                "temperatures must satisfy min <= mean <= max on {}",
                self.date
            )));
        }
        Ok(())
    }
}

/// Weather category of a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weather {
    Rainy,
    Sunny,
    Cloudy,
}

impl Weather {
    /// Fixed class-encoding index: rainy 0, sunny 1, cloudy 2.
    pub fn index(self) -> usize {
        match self {
            Weather::Rainy => 0,
            Weather::Sunny => 1,
            Weather::Cloudy => 2,
        }
    }
}

/// The loaded and preprocessed corpus: stations, one graph per retained
/// day (sorted by date), and the per-class counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub stations: StationSet,
    pub graphs: Vec<DailyGraph>,
    pub class_counts: [usize; N_CLASSES],
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }
}

/// Groups trips by day and folds both directions of a pair into one edge
/// with the key normalized to `i <= j`. Same-station records are kept in
/// the edge list (they are dropped later, at adjacency construction).
pub fn aggregate_daily(
    trips: &[RawTrip],
    n_stations: usize,
) -> Result<BTreeMap<NaiveDate, Vec<Edge>>> {
    let mut days: BTreeMap<NaiveDate, BTreeMap<(usize, usize), u64>> = BTreeMap::new();
    for t in trips {
        if t.origin >= n_stations || t.destination >= n_stations {
            return Err(Error::IndexOutOfRange(format!(
                "trip on {} references station {} but only {n_stations} stations exist",
                t.date,
                t.origin.max(t.destination)
            )));
        }
        let key = (t.origin.min(t.destination), t.origin.max(t.destination));
        *days.entry(t.date).or_default().entry(key).or_insert(0) += u64::from(t.count);
    }
    days.into_iter()
        .map(|(date, pairs)| {
            let edges = pairs
                .into_iter()
                .map(|((i, j), count)| {
                    let count = u32::try_from(count).map_err(|_| {
                        Error::InvalidArgument(format!(
                            "trip count overflow for pair ({i}, {j}) on {date}"
                        ))
                    })?;
                    Ok(Edge { i, j, count })
                })
                .collect::<Result<Vec<Edge>>>()?;
            Ok((date, edges))
        })
        .collect()
}

/// Keeps days whose total record count lies in `[5000, 30000]`; the paper's
/// thresholds are strict ("more than" / "less than"), so the boundaries stay.
pub fn filter_outliers(days: BTreeMap<NaiveDate, Vec<Edge>>) -> BTreeMap<NaiveDate, Vec<Edge>> {
    days.into_iter()
        .filter(|(_, edges)| {
            let total: u64 = edges.iter().map(|e| u64::from(e.count)).sum();
            (MIN_DAILY_TRIPS..=MAX_DAILY_TRIPS).contains(&total)
        })
        .collect()
}

/// Weather category from raw measurements. Rain takes precedence, then the
/// 20% cloud-cover threshold, and everything else is sunny.
pub fn label_weather(precipitation_mm: f64, cloud_cover_fraction: f64) -> Weather {
    if precipitation_mm > 0.0 {
        Weather::Rainy
    } else if cloud_cover_fraction > 0.20 {
        Weather::Cloudy
    } else {
        Weather::Sunny
    }
}

/// Target class: `3 * weekend + weather_index`.
pub fn label_target(weather: Weather, is_weekend_or_holiday: bool) -> usize {
    3 * usize::from(is_weekend_or_holiday) + weather.index()
}

/// Civil weekend (Saturday/Sunday) or a listed holiday.
pub fn is_weekend_or_holiday(date: NaiveDate, holidays: &HashSet<NaiveDate>) -> bool {
    matches!(date.weekday(), ChronoWeekday::Sat | ChronoWeekday::Sun) || holidays.contains(&date)
}

/// Z-scores each of the three temperature channels across all days in
/// place (population standard deviation). A constant channel is an error.
pub fn normalize_temperatures(channels: &mut [[f64; 3]]) -> Result<()> {
    if channels.len() < 2 {
        return Err(Error::InvalidArgument(
            "temperature normalization needs at least 2 days".into(),
        ));
    }
    let n = channels.len() as f64;
    for c in 0..3 {
        let mean = channels.iter().map(|t| t[c]).sum::<f64>() / n;
        let var = channels.iter().map(|t| (t[c] - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature channel {c} has zero variance"
            )));
        }
        let std = var.sqrt();
        for t in channels.iter_mut() {
            t[c] = (t[c] - mean) / std;
        }
    }
    Ok(())
}

/// Z-scores the 10 household columns across stations; the 6 one-hot
/// land-use columns are untouched. Returns the indices (into the household
/// block) of zero-variance columns that were left as-is.
pub fn normalize_node_features(stations: &StationSet) -> Result<(StationSet, Vec<usize>)> {
    let mut features = stations.node_features().clone();
    let n = features.nrows() as f64;
    let mut skipped = Vec::new();
    for h in 0..HOUSEHOLD_DIM {
        let col = LANDUSE_DIM + h;
        let mean = features.column(col).sum() / n;
        let var = features.column(col).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            skipped.push(h);
            continue;
        }
        let std = var.sqrt();
        for x in features.column_mut(col).iter_mut() {
            *x = (*x - mean) / std;
        }
    }
    Ok((stations.with_node_features(features)?, skipped))
}

/// Runs the full preprocessing pipeline on parsed records: aggregate,
/// filter, label, normalize temperatures and node features.
pub fn build_dataset(
    stations: StationSet,
    trips: &[RawTrip],
    weather: &BTreeMap<NaiveDate, WeatherDay>,
    holidays: &HashSet<NaiveDate>,
) -> Result<Dataset> {
    let days = filter_outliers(aggregate_daily(trips, stations.len())?);

    let mut dates = Vec::with_capacity(days.len());
    let mut edge_lists = Vec::with_capacity(days.len());
    let mut temps = Vec::with_capacity(days.len());
    let mut labels = Vec::with_capacity(days.len());
    for (date, edges) in days {
        let w = weather.get(&date).ok_or_else(|| {
            Error::InvalidArgument(format!("date {date} has trips but no weather record"))
        })?;
        w.validate()?;
        let weather_cat = label_weather(w.precipitation_mm, w.cloud_cover_fraction);
        let weekend = is_weekend_or_holiday(date, holidays);
        labels.push(label_target(weather_cat, weekend));
        temps.push([w.temp_mean, w.temp_max, w.temp_min]);
        dates.push(date);
        edge_lists.push(edges);
    }
    normalize_temperatures(&mut temps)?;

    let mut graphs = Vec::with_capacity(dates.len());
    let mut class_counts = [0usize; N_CLASSES];
    for (((date, edges), t), label) in dates
        .into_iter()
        .zip(edge_lists)
        .zip(temps)
        .zip(labels)
    {
        class_counts[label] += 1;
        graphs.push(DailyGraph::new(date, edges, t, label)?);
    }
    let (stations, _) = normalize_node_features(&stations)?;
    Ok(Dataset {
        stations,
        graphs,
        class_counts,
    })
}

/// Version stamp embedded in dataset cache snapshots.
pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheEnvelope {
    format_version: u32,
    dataset: Dataset,
}

/// Writes a self-describing snapshot of a preprocessed dataset.
pub fn save_cache(dataset: &Dataset, path: &std::path::Path) -> Result<()> {
    let envelope = CacheEnvelope {
        format_version: CACHE_FORMAT_VERSION,
        dataset: dataset.clone(),
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(&envelope)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a snapshot written by [`save_cache`], rejecting unknown versions.
pub fn load_cache(path: &std::path::Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let envelope: CacheEnvelope = serde_json::from_slice(&bytes)?;
    if envelope.format_version != CACHE_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported cache format version {} (expected {CACHE_FORMAT_VERSION})",
            envelope.format_version
        )));
    }
    Ok(envelope.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NODE_FEATURE_DIM;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, day).unwrap()
    }

    #[test]
    fn aggregation_folds_directions() {
        let trips = vec![
            RawTrip { date: d(1), origin: 0, destination: 1, count: 1 },
            RawTrip { date: d(1), origin: 1, destination: 0, count: 1 },
        ];
        let days = aggregate_daily(&trips, 2).unwrap();
        assert_eq!(days[&d(1)], vec![Edge { i: 0, j: 1, count: 2 }]);
    }

    #[test]
    fn aggregation_keeps_self_records() {
        let trips = vec![RawTrip { date: d(1), origin: 2, destination: 2, count: 1 }];
        let days = aggregate_daily(&trips, 3).unwrap();
        assert_eq!(days[&d(1)], vec![Edge { i: 2, j: 2, count: 1 }]);
    }

    #[test]
    fn aggregation_buckets_by_date() {
        let trips = vec![
            RawTrip { date: d(1), origin: 0, destination: 1, count: 1 },
            RawTrip { date: d(2), origin: 0, destination: 1, count: 3 },
        ];
        let days = aggregate_daily(&trips, 2).unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[&d(2)], vec![Edge { i: 0, j: 1, count: 3 }]);
    }

    #[test]
    fn aggregation_rejects_unknown_station() {
        let trips = vec![RawTrip { date: d(1), origin: 0, destination: 9, count: 1 }];
        assert!(aggregate_daily(&trips, 2).is_err());
    }

    fn day_with_total(date: NaiveDate, total: u64) -> (NaiveDate, Vec<Edge>) {
        // split the total over a few pairs, keeping each count under u32::MAX
        let mut edges = Vec::new();
        let mut left = total;
        let mut j = 1;
        while left > 0 {
            let take = left.min(20_000);
            edges.push(Edge { i: 0, j, count: take as u32 });
            left -= take;
            j += 1;
        }
        (date, edges)
    }

    #[test]
    fn outlier_filter_boundary_semantics() {
        let mut days = BTreeMap::new();
        days.extend([
            day_with_total(d(1), 31_000),
            day_with_total(d(2), 4_999),
            day_with_total(d(3), 30_000),
            day_with_total(d(4), 5_000),
            day_with_total(d(5), 12_345),
        ]);
        let kept = filter_outliers(days);
        let dates: Vec<NaiveDate> = kept.keys().cloned().collect();
        assert_eq!(dates, vec![d(3), d(4), d(5)]);
    }

    #[test]
    fn outlier_filter_730_minus_7() {
        let mut days = BTreeMap::new();
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        for i in 0..730u32 {
            let date = start + chrono::Days::new(u64::from(i));
            let total = match i {
                10 | 100 | 200 | 300 => 31_000,
                400 | 500 | 600 => 4_000,
                _ => 10_000,
            };
            let (date, edges) = day_with_total(date, total);
            days.insert(date, edges);
        }
        assert_eq!(filter_outliers(days).len(), 723);
    }

    #[test]
    fn weather_rules_and_precedence() {
        assert_eq!(label_weather(0.2, 0.1), Weather::Rainy);
        assert_eq!(label_weather(0.0, 0.5), Weather::Cloudy);
        assert_eq!(label_weather(0.0, 0.1), Weather::Sunny);
        // boundary: exactly 0mm is not rainy, exactly 20% is not cloudy
        assert_eq!(label_weather(0.0, 0.20), Weather::Sunny);
    }

    #[test]
    fn target_encoding_is_bijective() {
        assert_eq!(label_target(Weather::Rainy, false), 0);
        assert_eq!(label_target(Weather::Cloudy, true), 5);
        let mut seen = std::collections::HashSet::new();
        for w in [Weather::Rainy, Weather::Sunny, Weather::Cloudy] {
            for weekend in [false, true] {
                assert!(seen.insert(label_target(w, weekend)));
            }
        }
        assert_eq!(seen.len(), 6);
        assert!(seen.iter().all(|&c| c < N_CLASSES));
    }

    #[test]
    fn weekend_and_holiday_detection() {
        let mut holidays = HashSet::new();
        holidays.insert(NaiveDate::from_ymd_opt(2021, 12, 27).unwrap()); // a Monday
        let sat = NaiveDate::from_ymd_opt(2021, 3, 6).unwrap();
        let mon = NaiveDate::from_ymd_opt(2021, 3, 8).unwrap();
        assert!(is_weekend_or_holiday(sat, &holidays));
        assert!(!is_weekend_or_holiday(mon, &holidays));
        assert!(is_weekend_or_holiday(
            NaiveDate::from_ymd_opt(2021, 12, 27).unwrap(),
            &holidays
        ));
    }

    #[test]
    fn temperature_zscore_two_days() {
        let mut temps = vec![[10.0, 12.0, 8.0], [20.0, 22.0, 18.0]];
        normalize_temperatures(&mut temps).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(temps[0][c], -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(temps[1][c], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn temperature_zscore_rejects_constant_channel() {
        let mut temps = vec![[10.0, 12.0, 8.0], [20.0, 12.0, 18.0]];
        assert!(normalize_temperatures(&mut temps).is_err());
    }

    #[test]
    fn temperature_zscore_statistics() {
        let mut temps: Vec<[f64; 3]> = (0..50)
            .map(|i| {
                let x = i as f64;
                [x, x * 2.0 + 1.0, x - 3.0]
            })
            .collect();
        normalize_temperatures(&mut temps).unwrap();
        for c in 0..3 {
            let n = temps.len() as f64;
            let mean = temps.iter().map(|t| t[c]).sum::<f64>() / n;
            let var = temps.iter().map(|t| (t[c] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9);
            assert!((var.sqrt() - 1.0).abs() <= 1e-9);
        }
    }

    fn station_set(households: &[[f64; HOUSEHOLD_DIM]]) -> StationSet {
        let n = households.len();
        let mut features = Array2::<f64>::zeros((n, NODE_FEATURE_DIM));
        let mut coords = Array2::<f64>::zeros((n, 2));
        for (u, row) in households.iter().enumerate() {
            features[[u, u % LANDUSE_DIM]] = 1.0;
            for (h, &x) in row.iter().enumerate() {
                features[[u, LANDUSE_DIM + h]] = x;
            }
            coords[[u, 0]] = u as f64;
        }
        let ids = (0..n).map(|u| format!("s{u}")).collect();
        StationSet::new(ids, coords, features).unwrap()
    }

    #[test]
    fn node_feature_normalization_leaves_one_hot_alone() {
        let stations = station_set(&[[0.0; HOUSEHOLD_DIM], [10.0; HOUSEHOLD_DIM]]);
        let (normed, skipped) = normalize_node_features(&stations).unwrap();
        assert!(skipped.is_empty());
        for u in 0..2 {
            for c in 0..LANDUSE_DIM {
                assert_eq!(
                    normed.node_features()[[u, c]],
                    stations.node_features()[[u, c]]
                );
            }
            let expect = if u == 0 { -1.0 } else { 1.0 };
            for h in 0..HOUSEHOLD_DIM {
                assert_abs_diff_eq!(
                    normed.node_features()[[u, LANDUSE_DIM + h]],
                    expect,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn node_feature_normalization_flags_constant_columns() {
        let mut a = [5.0; HOUSEHOLD_DIM];
        let b = [5.0; HOUSEHOLD_DIM];
        a[3] = 7.0; // only column 3 varies
        let stations = station_set(&[a, b]);
        let (normed, skipped) = normalize_node_features(&stations).unwrap();
        let expected_skips: Vec<usize> = (0..HOUSEHOLD_DIM).filter(|&h| h != 3).collect();
        assert_eq!(skipped, expected_skips);
        // skipped columns untouched
        assert_eq!(normed.node_features()[[0, LANDUSE_DIM]], 5.0);
        assert_abs_diff_eq!(
            normed.node_features()[[0, LANDUSE_DIM + 3]],
            1.0,
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn aggregation_conserves_trip_records(
            raw in proptest::collection::vec((0u32..5, 0usize..4, 0usize..4, 1u32..50), 1..60)
        ) {
            let trips: Vec<RawTrip> = raw
                .into_iter()
                .map(|(day, o, dst, count)| RawTrip {
                    date: d(day + 1),
                    origin: o,
                    destination: dst,
                    count,
                })
                .collect();
            let total_in: u64 = trips.iter().map(|t| u64::from(t.count)).sum();
            let days = aggregate_daily(&trips, 4).unwrap();
            let total_out: u64 = days
                .values()
                .flat_map(|edges| edges.iter().map(|e| u64::from(e.count)))
                .sum();
            prop_assert_eq!(total_in, total_out);
        }

        #[test]
        fn weather_labels_partition_the_input_space(
            precip in 0.0f64..50.0,
            cloud in 0.0f64..1.0,
        ) {
            let w = label_weather(precip, cloud);
            if precip > 0.0 {
                prop_assert_eq!(w, Weather::Rainy);
            } else if cloud > 0.2 {
                prop_assert_eq!(w, Weather::Cloudy);
            } else {
                prop_assert_eq!(w, Weather::Sunny);
            }
        }
    }
}
