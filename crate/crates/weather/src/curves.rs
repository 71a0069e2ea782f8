use std::f64::consts::PI;

use nalgebra::DMatrix;
use crate::detrend::DetrendModel;
use crate::series::noleap_day_of_year;
use crate::{Result, WeatherError};

pub const DAYS: usize = 365;
/// Constant plus 11 sine/cosine pairs.
pub const FOURIER_TERMS: usize = 23;

/// `365 × 23` basis with columns `1, sin(2πld/365), cos(2πld/365)` for `l = 1..11`, `d = 1..365`.
pub fn fourier_basis() -> DMatrix<f64> {
    DMatrix::from_fn(DAYS, FOURIER_TERMS, |i, j| {
        let d = (i + 1) as f64;
        if j == 0 {
            return 1.0;
        }
        let l = ((j - 1) / 2 + 1) as f64;
        let arg = 2.0 * PI * l * d / DAYS as f64;
        if (j - 1) % 2 == 0 {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

/// Orthogonal projection of every row (a 365-day curve) onto the Fourier basis.
pub fn fourier_smooth(curves: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if curves.ncols() != DAYS {
        return Err(WeatherError::Invalid(format!("curves have {} columns, expected {DAYS}", curves.ncols())));
    }
    let q = fourier_basis().qr().q();
    Ok(curves * &q * q.transpose())
}

/// Day-of-year residual curves, one row per station.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCurveMatrix {
    pub station_ids: Vec<String>,
    /// Day-averaged and demeaned curves before smoothing.
    pub averaged: DMatrix<f64>,
    pub curves: DMatrix<f64>,
}

/// Averages each station's residuals by day of year (Feb 29 dropped), removes the
/// station's mean over the year, and smooths with [`fourier_smooth`].
pub fn residual_curves(models: &[DetrendModel]) -> Result<ResidualCurveMatrix> {
    if models.is_empty() {
        return Err(WeatherError::Invalid("no stations".into()));
    }
    let mut averaged = DMatrix::zeros(models.len(), DAYS);
    for (row, m) in models.iter().enumerate() {
        let mut sum = [0.0; DAYS];
        let mut count = [0usize; DAYS];
        for (d, r) in m.residual_dates.iter().zip(&m.residuals) {
            if let Some(doy) = noleap_day_of_year(*d) {
                sum[doy] += r;
                count[doy] += 1;
            }
        }
        if let Some(day) = count.iter().position(|&c| c == 0) {
            return Err(WeatherError::Degenerate(format!(
                "station {}: no residuals on day {} of the year",
                m.station_id,
                day + 1
            )));
        }
        let avg: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let mean = avg.iter().sum::<f64>() / DAYS as f64;
        for (j, v) in avg.iter().enumerate() {
            averaged[(row, j)] = v - mean;
        }
    }
    let curves = fourier_smooth(&averaged)?;
    Ok(ResidualCurveMatrix {
        station_ids: models.iter().map(|m| m.station_id.clone()).collect(),
        averaged,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn model(id: &str, years: i32, f: impl Fn(usize) -> f64) -> DetrendModel {
        let mut dates = Vec::new();
        let mut residuals = Vec::new();
        let mut d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(2000 + years, 1, 1).unwrap();
        while d < end {
            dates.push(d);
            residuals.push(noleap_day_of_year(d).map(&f).unwrap_or(1e6));
            d = d.succ_opt().unwrap();
        }
        DetrendModel {
            station_id: id.into(),
            origin_year: 2000,
            seasonal: crate::detrend::Seasonal {
                a: 0.0,
                b: 0.0,
                c: [0.0; 2],
                d: [0.0; 2],
            },
            ar: vec![0.0; 10],
            residual_dates: dates,
            residuals,
        }
    }

    #[test]
    fn zero_residuals_give_zero_curves() {
        let c = residual_curves(&[model("a", 2, |_| 0.0)]).unwrap();
        assert_eq!(c.curves.shape(), (1, DAYS));
        assert!(c.curves.amax() < 1e-12);
    }

    #[test]
    fn basis_member_is_reproduced_and_leap_days_dropped() {
        let f = |doy: usize| (2.0 * PI * (doy + 1) as f64 / 365.0).sin();
        let c = residual_curves(&[model("a", 5, f)]).unwrap();
        for j in 0..DAYS {
            assert!((c.curves[(0, j)] - f(j)).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let m = DMatrix::from_fn(3, DAYS, |i, j| ((i * 31 + j * 17) % 23) as f64 - 11.0);
        let once = fourier_smooth(&m).unwrap();
        let twice = fourier_smooth(&once).unwrap();
        assert!((once - twice).amax() < 1e-10);
    }

    #[test]
    fn missing_day_is_named() {
        let mut m = model("a", 2, |_| 1.0);
        let keep: Vec<usize> = (0..m.residual_dates.len())
            .filter(|&i| noleap_day_of_year(m.residual_dates[i]) != Some(99))
            .collect();
        m.residual_dates = keep.iter().map(|&i| m.residual_dates[i]).collect();
        m.residuals = keep.iter().map(|&i| m.residuals[i]).collect();
        let err = residual_curves(&[m]).unwrap_err().to_string();
        assert!(err.contains("day 100"), "{err}");
    }
}
