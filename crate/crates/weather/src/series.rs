use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::{Result, WeatherError};

/// Daily temperatures of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    station_id: String,
    dates: Vec<NaiveDate>,
    temps: Vec<f64>,
}

impl StationSeries {
    /// Dates must be strictly increasing and temperatures finite; gaps are allowed.
    pub fn new(station_id: impl Into<String>, dates: Vec<NaiveDate>, temps: Vec<f64>) -> Result<Self> {
        let station_id = station_id.into();
        if dates.len() != temps.len() {
            return Err(WeatherError::Invalid(format!(
                "station {station_id}: {} dates but {} temperatures",
                dates.len(),
                temps.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(WeatherError::Invalid(format!(
                "station {station_id}: dates not strictly increasing at {}",
                w[1]
            )));
        }
        if let Some(i) = temps.iter().position(|t| !t.is_finite()) {
            return Err(WeatherError::Invalid(format!(
                "station {station_id}: non-finite temperature on {}",
                dates[i]
            )));
        }
        Ok(StationSeries {
            station_id,
            dates,
            temps,
        })
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Missing stretches as `(last present day, next present day)` pairs, ignoring Feb 29.
    pub fn gaps(&self) -> Vec<(NaiveDate, NaiveDate)> {
        let idx: Vec<(NaiveDate, i64)> = self
            .dates
            .iter()
            .filter_map(|&d| noleap_index(d, self.origin_year()).map(|i| (d, i)))
            .collect();
        idx.windows(2)
            .filter(|w| w[1].1 - w[0].1 > 1)
            .map(|w| (w[0].0, w[1].0))
            .collect()
    }

    /// The same series without Feb 29 entries.
    pub fn without_leap_days(&self) -> StationSeries {
        let (dates, temps) = self
            .dates
            .iter()
            .zip(&self.temps)
            .filter(|(d, _)| !is_leap_day(**d))
            .map(|(d, t)| (*d, *t))
            .unzip();
        StationSeries {
            station_id: self.station_id.clone(),
            dates,
            temps,
        }
    }

    /// Calendar year of the first observation; day indices count from its Jan 1.
    pub fn origin_year(&self) -> i32 {
        self.dates.first().map(|d| d.year()).unwrap_or(0)
    }
}

pub fn is_leap_day(d: NaiveDate) -> bool {
    d.month() == 2 && d.day() == 29
}

/// Zero-based day of a 365-day year, skipping Feb 29 (which has none).
pub fn noleap_day_of_year(d: NaiveDate) -> Option<usize> {
    if is_leap_day(d) {
        return None;
    }
    let ord = d.ordinal0() as usize;
    let leap = NaiveDate::from_ymd_opt(d.year(), 2, 29).is_some();
    Some(if leap && d.month() > 2 { ord - 1 } else { ord })
}

/// Day count on a 365-day calendar starting at Jan 1 of `origin_year`.
pub fn noleap_index(d: NaiveDate, origin_year: i32) -> Option<i64> {
    noleap_day_of_year(d).map(|doy| (d.year() - origin_year) as i64 * 365 + doy as i64)
}

/// Reads long-format CSV with header `station_id,date,temp`; stations keep their order of first appearance.
pub fn read_long_csv<R: Read>(reader: R) -> Result<Vec<StationSeries>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["station_id", "date", "temp"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(WeatherError::Row {
            row: 1,
            message: format!("expected header station_id,date,temp, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut data: Vec<(Vec<NaiveDate>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map(|p| p.line()).unwrap_or(0);
            WeatherError::Row {
                row,
                message: e.to_string(),
            }
        })?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| WeatherError::Row { row, message };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(bad("empty station_id".into()));
        }
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|e| bad(format!("invalid date {:?}: {e}", &rec[1])))?;
        let temp: f64 = rec[2]
            .parse()
            .map_err(|_| bad(format!("invalid temperature {:?}", &rec[2])))?;
        if !temp.is_finite() {
            return Err(bad(format!("non-finite temperature {:?}", &rec[2])));
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            data.push((Vec::new(), Vec::new()));
            data.len() - 1
        });
        let (dates, temps) = &mut data[slot];
        if let Some(&last) = dates.last() {
            if date <= last {
                return Err(bad(format!("date {date} for station {id} is not after {last}")));
            }
        }
        dates.push(date);
        temps.push(temp);
    }
    order
        .into_iter()
        .zip(data)
        .map(|(id, (dates, temps))| StationSeries::new(id, dates, temps))
        .collect()
}

pub fn write_long_csv<W: Write>(series: &[StationSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "date", "temp"])?;
    for s in series {
        for (d, t) in s.dates.iter().zip(&s.temps) {
            w.write_record([s.station_id.as_str(), &d.format("%Y-%m-%d").to_string(), &t.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn noleap_calendar() {
        assert_eq!(noleap_day_of_year(d(2001, 1, 1)), Some(0));
        assert_eq!(noleap_day_of_year(d(2001, 12, 31)), Some(364));
        assert_eq!(noleap_day_of_year(d(2004, 12, 31)), Some(364));
        assert_eq!(noleap_day_of_year(d(2004, 2, 29)), None);
        assert_eq!(noleap_day_of_year(d(2004, 3, 1)), noleap_day_of_year(d(2003, 3, 1)));
        assert_eq!(noleap_index(d(2005, 1, 1), 2004), Some(365));
    }

    #[test]
    fn validation_and_gaps() {
        assert!(StationSeries::new("a", vec![d(2000, 1, 2), d(2000, 1, 1)], vec![1.0, 2.0]).is_err());
        assert!(StationSeries::new("a", vec![d(2000, 1, 1)], vec![f64::NAN]).is_err());
        let s = StationSeries::new(
            "a",
            vec![d(2000, 2, 28), d(2000, 2, 29), d(2000, 3, 1), d(2000, 3, 5)],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        assert_eq!(s.gaps(), vec![(d(2000, 3, 1), d(2000, 3, 5))]);
        assert_eq!(s.without_leap_days().len(), 3);
    }

    #[test]
    fn csv_round_trip_and_row_errors() {
        let s = StationSeries::new("x", vec![d(2000, 1, 1), d(2000, 1, 2)], vec![1.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_long_csv(std::slice::from_ref(&s), &mut buf).unwrap();
        let back = read_long_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![s]);

        let bad = "station_id,date,temp\nx,2000-01-01,1\nx,2000-13-01,2\n";
        match read_long_csv(bad.as_bytes()) {
            Err(WeatherError::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let bad = "station_id,date,temp\nx,2000-01-02,1\nx,2000-01-01,2\n";
        assert!(matches!(read_long_csv(bad.as_bytes()), Err(WeatherError::Row { row: 3, .. })));
        assert!(matches!(read_long_csv("a,b\n".as_bytes()), Err(WeatherError::Row { row: 1, .. })));
    }
}
