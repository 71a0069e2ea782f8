use std::f64::consts::PI;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::series::{noleap_index, StationSeries};
use crate::{Result, WeatherError};

pub const AR_ORDER: usize = 10;
pub const YEAR: f64 = 365.0;
/// Two years of data plus the lag window.
pub const MIN_LENGTH: usize = 365 * 2 + AR_ORDER;

/// `Λ(t) = a + bt + Σₗ cₗ sin(2πtl/365) + dₗ cos(2πtl/365)`, `l = 1, 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seasonal {
    pub a: f64,
    pub b: f64,
    pub c: [f64; 2],
    pub d: [f64; 2],
}

impl Seasonal {
    pub fn value(&self, t: f64) -> f64 {
        let mut v = self.a + self.b * t;
        for l in 0..2 {
            let arg = 2.0 * PI * t * (l + 1) as f64 / YEAR;
            v += self.c[l] * arg.sin() + self.d[l] * arg.cos();
        }
        v
    }

    /// `√(cₗ² + dₗ²)` for harmonic `l ∈ {1, 2}`.
    pub fn amplitude(&self, l: usize) -> f64 {
        self.c[l - 1].hypot(self.d[l - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetrendModel {
    pub station_id: String,
    /// Year whose Jan 1 is `t = 0`.
    pub origin_year: i32,
    pub seasonal: Seasonal,
    /// `β₁..β₁₀`.
    pub ar: Vec<f64>,
    /// Days with a complete lag window and their residuals `ε̂ₜ`.
    pub residual_dates: Vec<NaiveDate>,
    pub residuals: Vec<f64>,
}

/// Least squares through the SVD; `None` when the design is numerically rank deficient.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    // Scale columns so the rank test is not fooled by units.
    let scales: Vec<f64> = x.column_iter().map(|c| c.norm().max(f64::MIN_POSITIVE)).collect();
    let xs = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] / scales[j]);
    let (u, s, v) = expca::linalg::sorted_svd(&xs);
    let max = s.max();
    if s.len() < xs.ncols() || max == 0.0 || s.min() <= 1e-10 * max {
        return None;
    }
    let coef = v * (u.transpose() * y).component_div(&s);
    Some(DVector::from_fn(coef.len(), |j, _| coef[j] / scales[j]))
}

/// Seasonal OLS, then AR(10) least squares on the deseasonalized series.
///
/// Time runs on a 365-day calendar, so Feb 29 entries are skipped. Lag windows that
/// reach over a missing day are left out of the AR fit and produce no residual.
pub fn fit_detrend(series: &StationSeries) -> Result<DetrendModel> {
    let origin = series.origin_year();
    let obs: Vec<(NaiveDate, i64, f64)> = series
        .dates()
        .iter()
        .zip(series.temps())
        .filter_map(|(&d, &t)| noleap_index(d, origin).map(|i| (d, i, t)))
        .collect();
    if obs.len() < MIN_LENGTH {
        return Err(WeatherError::InsufficientData {
            station: series.station_id().to_string(),
            required: MIN_LENGTH,
            got: obs.len(),
        });
    }
    let n = obs.len();
    let design = DMatrix::from_fn(n, 6, |i, j| {
        let t = obs[i].1 as f64;
        match j {
            0 => 1.0,
            1 => t,
            _ => {
                let l = ((j - 2) / 2 + 1) as f64;
                let arg = 2.0 * PI * t * l / YEAR;
                if (j - 2) % 2 == 0 {
                    arg.sin()
                } else {
                    arg.cos()
                }
            }
        }
    });
    let temps = DVector::from_iterator(n, obs.iter().map(|o| o.2));
    let coef = least_squares(&design, &temps).ok_or_else(|| {
        WeatherError::Degenerate(format!("station {}: seasonal regressors are collinear", series.station_id()))
    })?;
    let seasonal = Seasonal {
        a: coef[0],
        b: coef[1],
        c: [coef[2], coef[4]],
        d: [coef[3], coef[5]],
    };

    let first = obs[0].1;
    let span = (obs[n - 1].1 - first + 1) as usize;
    let mut x: Vec<Option<f64>> = vec![None; span];
    for &(_, t, temp) in &obs {
        x[(t - first) as usize] = Some(temp - seasonal.value(t as f64));
    }
    let mut rows: Vec<(usize, [f64; AR_ORDER])> = Vec::new();
    for (pos, &(_, t, _)) in obs.iter().enumerate() {
        let s = (t - first) as usize;
        if s < AR_ORDER {
            continue;
        }
        let mut lags = [0.0; AR_ORDER];
        let complete = (1..=AR_ORDER).all(|j| match x[s - j] {
            Some(v) => {
                lags[j - 1] = v;
                true
            }
            None => false,
        });
        if complete {
            rows.push((pos, lags));
        }
    }
    if rows.len() < 2 * AR_ORDER {
        return Err(WeatherError::InsufficientData {
            station: series.station_id().to_string(),
            required: 2 * AR_ORDER,
            got: rows.len(),
        });
    }
    let target = DVector::from_iterator(rows.len(), rows.iter().map(|(pos, _)| x[(obs[*pos].1 - first) as usize].unwrap()));
    let scale = temps.amax().max(1.0);
    let ar: Vec<f64> = if x.iter().flatten().all(|v| v.abs() <= 1e-9 * scale) {
        vec![0.0; AR_ORDER]
    } else {
        let lagm = DMatrix::from_fn(rows.len(), AR_ORDER, |i, j| rows[i].1[j]);
        least_squares(&lagm, &target)
            .ok_or_else(|| {
                WeatherError::Degenerate(format!("station {}: autoregressive lags are collinear", series.station_id()))
            })?
            .iter()
            .copied()
            .collect()
    };
    let residuals = rows
        .iter()
        .zip(target.iter())
        .map(|((_, lags), &xt)| xt - lags.iter().zip(&ar).map(|(l, b)| l * b).sum::<f64>())
        .collect();
    Ok(DetrendModel {
        station_id: series.station_id().to_string(),
        origin_year: origin,
        seasonal,
        ar,
        residual_dates: rows.iter().map(|(pos, _)| obs[*pos].0).collect(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Datelike;

    fn daily(years: i32, f: impl Fn(i64) -> f64) -> StationSeries {
        let mut dates = Vec::new();
        let mut temps = Vec::new();
        let mut d = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        while d.year() < 2001 + years {
            if let Some(t) = noleap_index(d, 2001) {
                dates.push(d);
                temps.push(f(t));
            }
            d = d.succ_opt().unwrap();
        }
        StationSeries::new("s", dates, temps).unwrap()
    }

    #[test]
    fn constant_series() {
        let m = fit_detrend(&daily(3, |_| 7.5)).unwrap();
        assert!((m.seasonal.a - 7.5).abs() < 1e-9);
        assert!(m.seasonal.b.abs() < 1e-12);
        assert!(m.seasonal.c.iter().chain(&m.seasonal.d).all(|v| v.abs() < 1e-9));
        assert!(m.ar.iter().all(|&b| b == 0.0));
        assert!(m.residuals.iter().all(|r| r.abs() < 1e-9));
        assert_eq!(m.residuals.len(), 3 * 365 - AR_ORDER);
    }

    #[test]
    fn pure_seasonal_series() {
        let s = Seasonal {
            a: 12.0,
            b: 1e-4,
            c: [-9.0, 1.0],
            d: [-4.0, 0.5],
        };
        let m = fit_detrend(&daily(3, |t| s.value(t as f64))).unwrap();
        assert!((m.seasonal.a - 12.0).abs() < 1e-8);
        assert!((m.seasonal.c[0] + 9.0).abs() < 1e-8);
        assert!(m.ar.iter().all(|b| b.abs() < 1e-8));
        assert!(m.residuals.iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            fit_detrend(&daily(1, |_| 0.0)),
            Err(WeatherError::InsufficientData { .. })
        ));
    }

    #[test]
    fn gap_windows_are_skipped() {
        let full = daily(3, |t| ((t * 7919 % 1009) as f64 / 1009.0 - 0.5) + 0.01 * t as f64);
        let keep: Vec<usize> = (0..full.len()).filter(|&i| i != 500).collect();
        let s = StationSeries::new(
            "g",
            keep.iter().map(|&i| full.dates()[i]).collect(),
            keep.iter().map(|&i| full.temps()[i]).collect(),
        )
        .unwrap();
        let m = fit_detrend(&s).unwrap();
        // Day 500 is missing and days 501..=510 lose their windows.
        assert_eq!(m.residuals.len(), full.len() - AR_ORDER - 1 - AR_ORDER);
    }
}
