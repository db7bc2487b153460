//! Seeded synthetic dataset generator.
//!
//! Stations are placed in spatial blobs on the unit square, each blob
//! carrying one land-use category. Every day draws a latent class uniformly
//! over the 6 (weather x weekday) combinations; `signal_strength` scales how
//! strongly that class shapes the observable data:
//!
//! - temperatures separate the three weather categories,
//! - total trip volume shrinks on rainy and weekend days,
//! - weekends shift activity from office-category blobs (land-use 0) to
//!   park-category blobs (land-use 5), which reshapes which station pairs
//!   record any trips at all.
//!
//! At `signal_strength = 0` all of these modulations vanish and the features
//! carry no information about the label. Dates are assigned so the drawn
//! weekend bit matches the civil calendar; a small share of weekend-class
//! days instead lands on a weekday that is declared a holiday.

use super::{build_dataset, Dataset, RawTrip, WeatherDay};
use crate::error::{Error, Result};
use crate::graph::{StationSet, HOUSEHOLD_DIM, LANDUSE_DIM, NODE_FEATURE_DIM};
use crate::rng;
use chrono::{Datelike, Days, NaiveDate, Weekday};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// Land-use category treated as "office" (busy on weekdays).
const OFFICE_CATEGORY: usize = 0;
/// Land-use category treated as "park" (busy on weekends).
const PARK_CATEGORY: usize = 5;

/// Planted per-day classes and generator metadata, written as a sidecar so
/// runs can be validated against the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub signal_strength: f64,
    pub n_stations: usize,
    pub n_days: usize,
    pub classes: BTreeMap<NaiveDate, usize>,
    pub station_blob: Vec<usize>,
}

/// Raw generated records, in the same shape the CSV loaders produce.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub stations: StationSet,
    pub trips: Vec<RawTrip>,
    pub weather: Vec<WeatherDay>,
    pub holidays: BTreeSet<NaiveDate>,
    pub ground_truth: GroundTruth,
}

/// Generates raw records for `n_days` daily graphs over `n_stations`
/// stations. Deterministic in `(n_stations, n_days, seed, signal_strength)`.
pub fn generate_synthetic_records(
    n_stations: usize,
    n_days: usize,
    seed: u64,
    signal_strength: f64,
) -> Result<SyntheticData> {
    if n_stations < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 stations, got {n_stations}"
        )));
    }
    if n_days < 20 {
        return Err(Error::InvalidArgument(format!(
            "need at least 20 days, got {n_days}"
        )));
    }
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(Error::InvalidArgument(format!(
            "signal strength must lie in [0, 1], got {signal_strength}"
        )));
    }
    let sigma = signal_strength;

    let n_blobs = (n_stations / 8).clamp(2, 8);
    let station_blob: Vec<usize> = (0..n_stations).map(|u| u % n_blobs).collect();
    let blob_category = blob_categories(n_blobs);
    let stations = place_stations(n_stations, n_blobs, &station_blob, &blob_category, seed)?;

    // base pair affinities from distance decay; class modulation comes later
    let coords = stations.coords();
    let mut base_weight = Array2::<f64>::zeros((n_stations, n_stations));
    for i in 0..n_stations {
        for j in 0..n_stations {
            if i == j {
                base_weight[[i, j]] = 0.01;
            } else {
                let dx = coords[[i, 0]] - coords[[j, 0]];
                let dy = coords[[i, 1]] - coords[[j, 1]];
                base_weight[[i, j]] = (-(dx * dx + dy * dy).sqrt() / 0.1).exp();
            }
        }
    }

    let mut rng_class = rng::stream(seed, "synth/class");
    let mut rng_weather = rng::stream(seed, "synth/weather");
    let mut rng_trips = rng::stream(seed, "synth/trips");
    let mut rng_volume = rng::stream(seed, "synth/volume");
    let mut rng_dates = rng::stream(seed, "synth/dates");

    let mut weekday_cursor = CalendarCursor::new(false);
    let mut weekend_cursor = CalendarCursor::new(true);

    let mut trips = Vec::new();
    let mut weather = Vec::new();
    let mut holidays = BTreeSet::new();
    let mut classes = BTreeMap::new();

    for _ in 0..n_days {
        let class = rng_class.random_range(0..6usize);
        let weekend = class >= 3;
        let weather_idx = class % 3; // 0 rainy, 1 sunny, 2 cloudy

        let date = if weekend {
            if rng_dates.random::<f64>() < 0.05 {
                // realize the weekend bit as a holiday on a civil weekday
                let d = weekday_cursor.next();
                holidays.insert(d);
                d
            } else {
                weekend_cursor.next()
            }
        } else {
            weekday_cursor.next()
        };
        classes.insert(date, class);

        weather.push(sample_weather(date, weather_idx, sigma, &mut rng_weather));

        // per-station activity multipliers carry the weekend signal
        let activity: Vec<f64> = (0..n_stations)
            .map(|u| {
                let cat = blob_category[station_blob[u]];
                if weekend {
                    match cat {
                        PARK_CATEGORY => 1.0 + 3.0 * sigma,
                        OFFICE_CATEGORY => 1.0 - 0.95 * sigma,
                        _ => 1.0,
                    }
                } else {
                    match cat {
                        OFFICE_CATEGORY => 1.0 + 2.0 * sigma,
                        PARK_CATEGORY => 1.0 - 0.7 * sigma,
                        _ => 1.0,
                    }
                }
            })
            .collect();

        let mut weight_sum = 0.0;
        for i in 0..n_stations {
            for j in i..n_stations {
                weight_sum += base_weight[[i, j]] * activity[i] * activity[j];
            }
        }

        let volume_class_factor = {
            let day_type = if weekend { 1.0 - 0.25 * sigma } else { 1.0 + 0.1 * sigma };
            let weather_factor = match weather_idx {
                0 => 1.0 - 0.45 * sigma,
                1 => 1.0 + 0.15 * sigma,
                _ => 1.0,
            };
            day_type * weather_factor
        };
        let day_noise = (0.06 * gaussian(&mut rng_volume)).exp();
        let target_volume = (12_000.0 * volume_class_factor * day_noise).clamp(6_500.0, 24_000.0);
        let scale = target_volume / weight_sum;

        for i in 0..n_stations {
            for j in i..n_stations {
                let lambda = base_weight[[i, j]] * activity[i] * activity[j] * scale;
                let count = sample_poisson(lambda, &mut rng_trips);
                if count > 0 {
                    trips.push(RawTrip {
                        date,
                        origin: i,
                        destination: j,
                        count,
                    });
                }
            }
        }
    }

    let ground_truth = GroundTruth {
        seed,
        signal_strength,
        n_stations,
        n_days,
        classes,
        station_blob,
    };
    Ok(SyntheticData {
        stations,
        trips,
        weather,
        holidays,
        ground_truth,
    })
}

/// Generates records and runs the standard preprocessing pipeline on them.
pub fn generate_synthetic(
    n_stations: usize,
    n_days: usize,
    seed: u64,
    signal_strength: f64,
) -> Result<(Dataset, GroundTruth)> {
    let raw = generate_synthetic_records(n_stations, n_days, seed, signal_strength)?;
    let weather: BTreeMap<NaiveDate, WeatherDay> =
        raw.weather.iter().map(|w| (w.date, w.clone())).collect();
    let holidays: HashSet<NaiveDate> = raw.holidays.iter().cloned().collect();
    let dataset = build_dataset(raw.stations, &raw.trips, &weather, &holidays)?;
    Ok((dataset, raw.ground_truth))
}

/// Land-use category per blob: blob 0 is the office category, blob 1 the
/// park category, and further blobs cycle through the remaining categories.
/// This keeps the office/park weekday contrast present at every blob count.
fn blob_categories(n_blobs: usize) -> Vec<usize> {
    (0..n_blobs)
        .map(|b| match b {
            0 => OFFICE_CATEGORY,
            1 => PARK_CATEGORY,
            _ => 1 + (b - 2) % 4,
        })
        .collect()
}

fn place_stations(
    n_stations: usize,
    n_blobs: usize,
    station_blob: &[usize],
    blob_category: &[usize],
    seed: u64,
) -> Result<StationSet> {
    let mut rng = rng::stream(seed, "synth/stations");
    let centers: Vec<(f64, f64)> = (0..n_blobs)
        .map(|b| {
            let angle = 2.0 * std::f64::consts::PI * b as f64 / n_blobs as f64;
            (0.5 + 0.34 * angle.cos(), 0.5 + 0.34 * angle.sin())
        })
        .collect();
    let mut coords = Array2::<f64>::zeros((n_stations, 2));
    let mut features = Array2::<f64>::zeros((n_stations, NODE_FEATURE_DIM));
    for u in 0..n_stations {
        let blob = station_blob[u];
        let (cx, cy) = centers[blob];
        coords[[u, 0]] = (cx + 0.045 * gaussian(&mut rng)).clamp(0.0, 1.0);
        coords[[u, 1]] = (cy + 0.045 * gaussian(&mut rng)).clamp(0.0, 1.0);
        features[[u, blob_category[blob]]] = 1.0;
        for h in 0..HOUSEHOLD_DIM {
            let base = 80.0 + 40.0 * ((blob + h) % 5) as f64;
            features[[u, LANDUSE_DIM + h]] = (base + 60.0 * rng.random::<f64>()).floor();
        }
    }
    let ids = (0..n_stations).map(|u| format!("s{u:04}")).collect();
    StationSet::new(ids, coords, features)
}

fn sample_weather(
    date: NaiveDate,
    weather_idx: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> WeatherDay {
    let shift = match weather_idx {
        0 => -8.0 * sigma,
        1 => 8.0 * sigma,
        _ => 0.0,
    };
    let mean = 12.0 + shift + 2.0 * gaussian(rng);
    let max = mean + 2.0 + 1.2 * gaussian(rng).abs();
    let min = mean - 2.0 - 1.2 * gaussian(rng).abs();
    let (precip, cloud) = match weather_idx {
        0 => (0.5 + 3.0 * gaussian(rng).abs(), 0.3 + 0.6 * rng.random::<f64>()),
        1 => (0.0, 0.19 * rng.random::<f64>()),
        _ => (0.0, 0.21 + 0.7 * rng.random::<f64>()),
    };
    WeatherDay {
        date,
        precipitation_mm: precip,
        cloud_cover_fraction: cloud,
        temp_mean: mean,
        temp_max: max,
        temp_min: min,
    }
}

/// Walks the calendar from 2021-01-01, returning only weekend or only
/// weekday dates. The two pools are disjoint, so the cursors never collide.
struct CalendarCursor {
    next: NaiveDate,
    weekend: bool,
}

impl CalendarCursor {
    fn new(weekend: bool) -> Self {
        Self {
            next: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            weekend,
        }
    }

    fn next(&mut self) -> NaiveDate {
        loop {
            let date = self.next;
            self.next = date + Days::new(1);
            let is_weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            if is_weekend == self.weekend {
                return date;
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniforms
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_poisson(lambda: f64, rng: &mut ChaCha8Rng) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw = Poisson::new(lambda).expect("positive lambda").sample(rng);
    draw as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MAX_DAILY_TRIPS, MIN_DAILY_TRIPS};

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic_records(16, 24, 9, 0.7).unwrap();
        let b = generate_synthetic_records(16, 24, 9, 0.7).unwrap();
        assert_eq!(a.trips, b.trips);
        assert_eq!(a.weather, b.weather);
        assert_eq!(a.holidays, b.holidays);
        assert_eq!(a.ground_truth.classes, b.ground_truth.classes);
        assert_eq!(a.stations.node_features(), b.stations.node_features());
    }

    #[test]
    fn generator_rejects_tiny_inputs() {
        assert!(generate_synthetic_records(4, 30, 0, 1.0).is_err());
        assert!(generate_synthetic_records(16, 5, 0, 1.0).is_err());
        assert!(generate_synthetic_records(16, 30, 0, 1.5).is_err());
    }

    #[test]
    fn daily_totals_respect_the_outlier_bounds() {
        let raw = generate_synthetic_records(32, 40, 3, 1.0).unwrap();
        let mut totals: BTreeMap<NaiveDate, u64> = BTreeMap::new();
        for t in &raw.trips {
            *totals.entry(t.date).or_insert(0) += u64::from(t.count);
        }
        assert_eq!(totals.len(), 40);
        for (&date, &total) in &totals {
            assert!(
                (MIN_DAILY_TRIPS..=MAX_DAILY_TRIPS).contains(&total),
                "day {date} has {total} trips"
            );
        }
    }

    #[test]
    fn labels_recovered_by_the_pipeline_match_the_planted_classes() {
        let (dataset, truth) = generate_synthetic(16, 30, 11, 0.5).unwrap();
        assert_eq!(dataset.graphs.len(), 30);
        for g in &dataset.graphs {
            assert_eq!(
                g.label, truth.classes[&g.date],
                "label mismatch on {}",
                g.date
            );
        }
    }

    #[test]
    fn weekend_classes_land_on_weekend_or_holiday_dates() {
        let raw = generate_synthetic_records(16, 60, 5, 1.0).unwrap();
        for (&date, &class) in &raw.ground_truth.classes {
            let civil_weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            let weekend = civil_weekend || raw.holidays.contains(&date);
            assert_eq!(class >= 3, weekend, "date {date} class {class}");
        }
    }

    #[test]
    fn zero_signal_removes_class_modulation_of_volume() {
        // with sigma = 0 the per-class expected volumes coincide; sanity-check
        // that realized volumes are not systematically ordered by class
        let raw = generate_synthetic_records(24, 120, 13, 0.0).unwrap();
        let mut totals: BTreeMap<NaiveDate, u64> = BTreeMap::new();
        for t in &raw.trips {
            *totals.entry(t.date).or_insert(0) += u64::from(t.count);
        }
        let mut by_weekend = [Vec::new(), Vec::new()];
        for (date, &class) in &raw.ground_truth.classes {
            by_weekend[usize::from(class >= 3)].push(totals[date] as f64);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let m0 = mean(&by_weekend[0]);
        let m1 = mean(&by_weekend[1]);
        assert!(
            (m0 - m1).abs() / m0 < 0.05,
            "volume means differ at zero signal: {m0} vs {m1}"
        );
    }
}
