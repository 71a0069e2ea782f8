use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use expca::{explained_variance, fit_components, Algorithm, ComponentSet, DataMatrix, TauLevel};
use rayon::prelude::*;
use serde::Serialize;

use crate::curves::{residual_curves, ResidualCurveMatrix, DAYS};
use crate::detrend::{fit_detrend, DetrendModel};
use crate::series::StationSeries;
use crate::{Result, WeatherError};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisEntry {
    pub tau: TauLevel,
    pub algorithm: Algorithm,
    pub components: ComponentSet,
    /// Cumulative explained variance for `1..=k` components.
    pub explained: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherAnalysis {
    pub k: usize,
    pub entries: Vec<AnalysisEntry>,
}

impl WeatherAnalysis {
    pub fn taus(&self) -> Vec<TauLevel> {
        let mut out: Vec<TauLevel> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.tau) {
                out.push(e.tau);
            }
        }
        out
    }

    pub fn converged(&self) -> bool {
        self.entries.iter().all(|e| e.components.converged())
    }
}

/// Fits every algorithm at every level to the smoothed curves.
pub fn analyze(
    curves: &ResidualCurveMatrix,
    taus: &[TauLevel],
    k: usize,
    algorithms: &[Algorithm],
) -> Result<WeatherAnalysis> {
    if taus.is_empty() || algorithms.is_empty() {
        return Err(WeatherError::Invalid("need at least one level and one algorithm".into()));
    }
    let y = DataMatrix::new(curves.curves.clone())?;
    let jobs: Vec<(TauLevel, Algorithm)> = taus
        .iter()
        .flat_map(|&t| algorithms.iter().map(move |&a| (t, a)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(tau, algorithm)| {
            let components = fit_components(&y, k, tau, algorithm)?;
            let explained = explained_variance(&y, &components)?;
            Ok(AnalysisEntry {
                tau,
                algorithm,
                components,
                explained,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeatherAnalysis { k, entries })
}

/// Everything the pipeline computes from raw station series.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub models: Vec<DetrendModel>,
    pub curves: ResidualCurveMatrix,
    pub analysis: WeatherAnalysis,
}

/// Detrends each station (in parallel), builds the residual curves and analyzes them.
pub fn run_pipeline(
    series: &[StationSeries],
    taus: &[TauLevel],
    k: usize,
    algorithms: &[Algorithm],
) -> Result<PipelineOutput> {
    let usable: Vec<StationSeries> = series
        .iter()
        .map(StationSeries::without_leap_days)
        .filter(|s| !s.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(WeatherError::NoUsableDays);
    }
    let models = usable.par_iter().map(fit_detrend).collect::<Result<Vec<_>>>()?;
    let curves = residual_curves(&models)?;
    let analysis = analyze(&curves, taus, k, algorithms)?;
    Ok(PipelineOutput {
        models,
        curves,
        analysis,
    })
}

fn tau_label(tau: TauLevel) -> String {
    tau.value().to_string()
}

/// `day` then one column per component and algorithm at level `tau`, e.g. `TD_1`.
pub fn write_components_csv<W: Write>(analysis: &WeatherAnalysis, tau: TauLevel, out: W) -> Result<()> {
    let entries: Vec<&AnalysisEntry> = analysis.entries.iter().filter(|e| e.tau == tau).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["day".to_string()];
    for e in &entries {
        for j in 0..e.components.k() {
            header.push(format!("{}_{}", e.algorithm.abbreviation(), j + 1));
        }
    }
    w.write_record(&header)?;
    for d in 0..DAYS {
        let mut rec = vec![(d + 1).to_string()];
        for e in &entries {
            for j in 0..e.components.k() {
                rec.push(e.components.components[(d, j)].to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `day` then one column per level and algorithm, e.g. `TD_0.95`.
pub fn write_centers_csv<W: Write>(analysis: &WeatherAnalysis, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["day".to_string()];
    for e in &analysis.entries {
        header.push(format!("{}_{}", e.algorithm.abbreviation(), tau_label(e.tau)));
    }
    w.write_record(&header)?;
    for d in 0..DAYS {
        let mut rec = vec![(d + 1).to_string()];
        for e in &analysis.entries {
            rec.push(e.components.center[d].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long table `tau,algorithm,components,explained_variance`.
pub fn write_explained_csv<W: Write>(analysis: &WeatherAnalysis, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "algorithm", "components", "explained_variance"])?;
    for e in &analysis.entries {
        for (j, v) in e.explained.iter().enumerate() {
            w.write_record([
                tau_label(e.tau),
                e.algorithm.abbreviation().to_string(),
                (j + 1).to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `day` then one column per station.
pub fn write_curves_csv<W: Write>(curves: &ResidualCurveMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["day".to_string()];
    header.extend(curves.station_ids.iter().cloned());
    w.write_record(&header)?;
    for d in 0..DAYS {
        let mut rec = vec![(d + 1).to_string()];
        rec.extend((0..curves.curves.nrows()).map(|i| curves.curves[(i, d)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per station with the seasonal and autoregressive coefficients.
pub fn write_detrend_csv<W: Write>(models: &[DetrendModel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["station_id", "origin_year", "a", "b", "c1", "d1", "c2", "d2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=crate::detrend::AR_ORDER).map(|j| format!("beta{j}")));
    header.push("residuals".into());
    w.write_record(&header)?;
    for m in models {
        let s = &m.seasonal;
        let mut rec = vec![
            m.station_id.clone(),
            m.origin_year.to_string(),
            s.a.to_string(),
            s.b.to_string(),
            s.c[0].to_string(),
            s.d[0].to_string(),
            s.c[1].to_string(),
            s.d[1].to_string(),
        ];
        rec.extend(m.ar.iter().map(|b| b.to_string()));
        rec.push(m.residuals.len().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFiles {
    pub detrend: PathBuf,
    pub curves: PathBuf,
    pub centers: PathBuf,
    pub explained: PathBuf,
    /// One file per level, in the order of [`WeatherAnalysis::taus`].
    pub components: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes all CSV outputs into `dir` (created if missing).
pub fn write_outputs(dir: &Path, output: &PipelineOutput) -> Result<OutputFiles> {
    std::fs::create_dir_all(dir)?;
    let files = OutputFiles {
        detrend: dir.join("detrend.csv"),
        curves: dir.join("curves.csv"),
        centers: dir.join("centers.csv"),
        explained: dir.join("explained_variance.csv"),
        components: output
            .analysis
            .taus()
            .iter()
            .map(|t| dir.join(format!("components_tau_{}.csv", tau_label(*t))))
            .collect(),
    };
    write_detrend_csv(&output.models, create(&files.detrend)?)?;
    write_curves_csv(&output.curves, create(&files.curves)?)?;
    write_centers_csv(&output.analysis, create(&files.centers)?)?;
    write_explained_csv(&output.analysis, create(&files.explained)?)?;
    for (tau, path) in output.analysis.taus().into_iter().zip(&files.components) {
        write_components_csv(&output.analysis, tau, create(path)?)?;
    }
    Ok(files)
}
