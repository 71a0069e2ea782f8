//! Temperature residual curves and their expectile components.
//!
//! Each station's daily series is detrended with a linear-plus-two-harmonic seasonal
//! fit followed by an AR(10) model on the deseasonalized values. Residuals are averaged
//! by day of year, demeaned per station, smoothed onto 23 Fourier functions, and the
//! resulting `stations × 365` matrix is analyzed with the component algorithms of
//! [`expca`].

pub mod analysis;
pub mod curves;
pub mod detrend;
pub mod fixture;
pub mod series;

pub use analysis::{analyze, run_pipeline, write_outputs, AnalysisEntry, OutputFiles, PipelineOutput, WeatherAnalysis};
pub use curves::{fourier_basis, fourier_smooth, residual_curves, ResidualCurveMatrix, DAYS, FOURIER_TERMS};
pub use detrend::{fit_detrend, DetrendModel, Seasonal, AR_ORDER, MIN_LENGTH};
pub use fixture::{fixture_models, synthetic_fixture, synthetic_station, StationModel};
pub use series::{read_long_csv, write_long_csv, StationSeries};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum WeatherError {
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("station {station}: need at least {required} usable observations, got {got}")]
    InsufficientData {
        station: String,
        required: usize,
        got: usize,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no usable days: every observation falls on Feb 29")]
    NoUsableDays,
    #[error(transparent)]
    Fit(#[from] expca::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WeatherError>;
