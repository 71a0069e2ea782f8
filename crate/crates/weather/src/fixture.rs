//! Synthetic stations drawn from the seasonal plus AR(10) model.

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detrend::{Seasonal, AR_ORDER};
use crate::series::{is_leap_day, noleap_index, StationSeries};
use crate::{Result, WeatherError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationModel {
    pub station_id: String,
    pub seasonal: Seasonal,
    pub ar: [f64; AR_ORDER],
    pub noise_sd: f64,
}

const BURN_IN: usize = 1000;

/// Daily series for whole calendar years `first_year..first_year + years`.
///
/// Feb 29 rows are included and repeat Feb 28, as the model itself has no leap days.
pub fn synthetic_station(model: &StationModel, first_year: i32, years: i32, seed: u64) -> Result<StationSeries> {
    if years < 1 || !(model.noise_sd >= 0.0 && model.noise_sd.is_finite()) {
        return Err(WeatherError::Invalid("need years >= 1 and a finite noise_sd >= 0".into()));
    }
    let normal = Normal::new(0.0, model.noise_sd).map_err(|e| WeatherError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = years as usize * 365;
    let mut x = vec![0.0; BURN_IN + days];
    for t in AR_ORDER..x.len() {
        let ar: f64 = (1..=AR_ORDER).map(|j| model.ar[j - 1] * x[t - j]).sum();
        x[t] = ar + normal.sample(&mut rng);
    }
    let mut dates = Vec::new();
    let mut temps = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(first_year, 1, 1).ok_or_else(|| WeatherError::Invalid("bad year".into()))?;
    while d.year() < first_year + years {
        let t = match noleap_index(d, first_year) {
            Some(t) => t,
            None => {
                debug_assert!(is_leap_day(d));
                noleap_index(d.pred_opt().expect("Feb 28 exists"), first_year).expect("Feb 28 has an index")
            }
        };
        dates.push(d);
        temps.push(model.seasonal.value(t as f64) + x[BURN_IN + t as usize]);
        d = d.succ_opt().expect("date in range");
    }
    StationSeries::new(model.station_id.clone(), dates, temps)
}

/// `n` stations with distinct, stationary AR(10) dynamics and strong seasonality.
pub fn fixture_models(n: usize) -> Vec<StationModel> {
    (0..n)
        .map(|i| {
            let s = i as f64;
            StationModel {
                station_id: format!("ST{:03}", i + 1),
                seasonal: Seasonal {
                    a: 12.0 + s,
                    b: 2e-5 * (1.0 + s),
                    c: [-6.0 - 0.5 * s, 2.0 + 0.2 * s],
                    d: [-11.0 + 0.3 * s, -1.5 - 0.1 * s],
                },
                ar: [0.6 + 0.02 * s, -0.12, 0.08, 0.0, 0.03, 0.0, 0.0, 0.02, 0.0, 0.04],
                noise_sd: 0.8 + 0.2 * s,
            }
        })
        .collect()
}

/// Stations from [`fixture_models`], each with its own seed derived from `seed`.
pub fn synthetic_fixture(n: usize, first_year: i32, years: i32, seed: u64) -> Result<Vec<(StationModel, StationSeries)>> {
    fixture_models(n)
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let s = synthetic_station(&m, first_year, years, seed.wrapping_add(i as u64))?;
            Ok((m, s))
        })
        .collect()
}
