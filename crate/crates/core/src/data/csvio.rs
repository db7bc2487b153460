//! CSV and text-file ingestion for the four dataset inputs.
//!
//! Formats (headers required, UTF-8, decimal points, ISO-8601 dates):
//! - `stations.csv`: `station_id,x,y,landuse_0..landuse_5,households_0..households_9`
//! - `trips.csv`: `date,origin,destination,count`
//! - `weather.csv`: `date,precip_mm,cloud_fraction,temp_mean,temp_max,temp_min`
//! - `holidays.txt`: one date per line

use super::{build_dataset, Dataset, RawTrip, WeatherDay};
use crate::error::{Error, Result};
use crate::graph::{StationSet, HOUSEHOLD_DIM, LANDUSE_DIM, NODE_FEATURE_DIM};
use chrono::NaiveDate;
use ndarray::Array2;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

/// Locations of the four dataset files.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub stations: PathBuf,
    pub trips: PathBuf,
    pub weather: PathBuf,
    pub holidays: PathBuf,
}

impl DataPaths {
    /// Conventional file names under one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            stations: dir.join("stations.csv"),
            trips: dir.join("trips.csv"),
            weather: dir.join("weather.csv"),
            holidays: dir.join("holidays.txt"),
        }
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))
}

fn expect_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let got = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(parse_err(
            path,
            1,
            format!("bad header: expected {want:?}, got {got:?}"),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    path: &Path,
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing field {name}")))?;
    raw.parse::<T>()
        .map_err(|e| parse_err(path, line, format!("field {name}={raw:?}: {e}")))
}

fn date_field(path: &Path, record: &csv::StringRecord, idx: usize) -> Result<NaiveDate> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(path, line, "missing date"))?;
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|e| parse_err(path, line, format!("date {raw:?}: {e}")))
}

/// Reads `stations.csv`, validating raw household counts (finite, >= 0).
pub fn load_station_file(path: &Path) -> Result<StationSet> {
    let mut rdr = reader(path)?;
    let mut want = vec!["station_id".to_string(), "x".into(), "y".into()];
    for c in 0..LANDUSE_DIM {
        want.push(format!("landuse_{c}"));
    }
    for c in 0..HOUSEHOLD_DIM {
        want.push(format!("households_{c}"));
    }
    let want_refs: Vec<&str> = want.iter().map(String::as_str).collect();
    expect_header(path, &mut rdr, &want_refs)?;

    let mut ids = Vec::new();
    let mut coord_rows = Vec::new();
    let mut feature_rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 + NODE_FEATURE_DIM {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", 3 + NODE_FEATURE_DIM, record.len()),
            ));
        }
        ids.push(field::<String>(path, &record, 0, "station_id")?);
        coord_rows.push([
            field::<f64>(path, &record, 1, "x")?,
            field::<f64>(path, &record, 2, "y")?,
        ]);
        let mut row = [0.0; NODE_FEATURE_DIM];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = field::<f64>(path, &record, 3 + k, &want[3 + k])?;
        }
        for (h, &x) in row[LANDUSE_DIM..].iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(parse_err(
                    path,
                    line,
                    format!("households_{h} must be finite and non-negative, got {x}"),
                ));
            }
        }
        feature_rows.push(row);
    }
    let n = ids.len();
    let mut coords = Array2::zeros((n, 2));
    let mut features = Array2::zeros((n, NODE_FEATURE_DIM));
    for (u, (c, f)) in coord_rows.iter().zip(feature_rows.iter()).enumerate() {
        coords[[u, 0]] = c[0];
        coords[[u, 1]] = c[1];
        for (k, &x) in f.iter().enumerate() {
            features[[u, k]] = x;
        }
    }
    StationSet::new(ids, coords, features)
}

fn load_trips(path: &Path, stations: &StationSet) -> Result<Vec<RawTrip>> {
    let mut rdr = reader(path)?;
    expect_header(path, &mut rdr, &["date", "origin", "destination", "count"])?;
    let index: HashMap<&str, usize> = stations
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut trips = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let date = date_field(path, &record, 0)?;
        let origin_id: String = field(path, &record, 1, "origin")?;
        let dest_id: String = field(path, &record, 2, "destination")?;
        let count: u32 = field(path, &record, 3, "count")?;
        if count == 0 {
            return Err(parse_err(path, line, "count must be >= 1"));
        }
        let origin = *index
            .get(origin_id.as_str())
            .ok_or_else(|| parse_err(path, line, format!("unknown station {origin_id:?}")))?;
        let destination = *index
            .get(dest_id.as_str())
            .ok_or_else(|| parse_err(path, line, format!("unknown station {dest_id:?}")))?;
        trips.push(RawTrip {
            date,
            origin,
            destination,
            count,
        });
    }
    Ok(trips)
}

fn load_weather(path: &Path) -> Result<BTreeMap<NaiveDate, WeatherDay>> {
    let mut rdr = reader(path)?;
    expect_header(
        path,
        &mut rdr,
        &["date", "precip_mm", "cloud_fraction", "temp_mean", "temp_max", "temp_min"],
    )?;
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let day = WeatherDay {
            date: date_field(path, &record, 0)?,
            precipitation_mm: field(path, &record, 1, "precip_mm")?,
            cloud_cover_fraction: field(path, &record, 2, "cloud_fraction")?,
            temp_mean: field(path, &record, 3, "temp_mean")?,
            temp_max: field(path, &record, 4, "temp_max")?,
            temp_min: field(path, &record, 5, "temp_min")?,
        };
        day.validate()
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        if out.insert(day.date, day.clone()).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("duplicate weather record for {}", day.date),
            ));
        }
    }
    Ok(out)
}

fn load_holidays(path: &Path) -> Result<HashSet<NaiveDate>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashSet::new();
    for (k, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map_err(|e| parse_err(path, k as u64 + 1, format!("date {raw:?}: {e}")))?;
        out.insert(date);
    }
    Ok(out)
}

/// Parses all four files and runs the preprocessing pipeline.
pub fn load_dataset(paths: &DataPaths) -> Result<Dataset> {
    let stations = load_station_file(&paths.stations)?;
    let trips = load_trips(&paths.trips, &stations)?;
    let weather = load_weather(&paths.weather)?;
    let holidays = load_holidays(&paths.holidays)?;
    build_dataset(stations, &trips, &weather, &holidays)
}
