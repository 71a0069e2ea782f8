use chrono::NaiveDate;
use expca::{Algorithm, TauLevel};
use expca_weather::{
    analyze, fit_detrend, fourier_smooth, read_long_csv, run_pipeline, synthetic_fixture, write_long_csv,
    write_outputs, ResidualCurveMatrix, StationSeries, WeatherError, DAYS,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

const ALL: [Algorithm; 3] = [Algorithm::TopDown, Algorithm::BottomUp, Algorithm::PrincipalExpectile];

fn tau(v: f64) -> TauLevel {
    TauLevel::new(v).unwrap()
}

fn curves(m: DMatrix<f64>) -> ResidualCurveMatrix {
    ResidualCurveMatrix {
        station_ids: (0..m.nrows()).map(|i| format!("s{i}")).collect(),
        averaged: m.clone(),
        curves: m,
    }
}

/// Largest principal angle between the column spans of `a` and `b`.
fn max_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = (qa.transpose() * qb).singular_values();
    s.min().clamp(-1.0, 1.0).acos()
}

/// Leading `k` eigenvectors of the sample covariance.
fn pca(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mean = m.row_mean();
    let c = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j]);
    let eig = SymmetricEigen::new(c.transpose() * &c);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    DMatrix::from_fn(m.ncols(), k, |r, c| eig.eigenvectors[(r, idx[c])])
}

fn harmonic(l: usize, d: usize) -> f64 {
    (2.0 * std::f64::consts::PI * (l * (d + 1)) as f64 / DAYS as f64).sin()
}

#[test]
fn round_trip_recovers_coefficients() {
    for (model, series) in synthetic_fixture(2, 1961, 40, 7).unwrap() {
        let fit = fit_detrend(&series).unwrap();
        for (b, t) in fit.ar.iter().zip(&model.ar) {
            assert!((b - t).abs() < 0.05, "{}: beta {b} vs {t}", model.station_id);
        }
        for l in 1..=2 {
            let (a, t) = (fit.seasonal.amplitude(l), model.seasonal.amplitude(l));
            assert!((a - t).abs() < 0.05 * t, "{}: amplitude {l} {a} vs {t}", model.station_id);
        }
    }
}

#[test]
fn leap_years_leave_365_bins_with_zero_row_means() {
    let series: Vec<StationSeries> = synthetic_fixture(2, 1999, 6, 3).unwrap().into_iter().map(|p| p.1).collect();
    assert!(series[0].dates().contains(&NaiveDate::from_ymd_opt(2000, 2, 29).unwrap()));
    let out = run_pipeline(&series, &[tau(0.5)], 1, &[Algorithm::TopDown]).unwrap();
    assert_eq!(out.curves.averaged.shape(), (2, DAYS));
    assert_eq!(out.curves.curves.shape(), (2, DAYS));
    for r in 0..2 {
        assert!(out.curves.averaged.row(r).sum().abs() / (DAYS as f64) < 1e-10);
    }
}

#[test]
fn white_noise_variance_shrinks_by_basis_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = DMatrix::from_fn(200, DAYS, |_, _| StandardNormal.sample(&mut rng));
    let ratio = fourier_smooth(&m).unwrap().norm_squared() / m.norm_squared();
    let expected = 23.0 / 365.0;
    assert!((ratio / expected - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn symmetric_level_matches_pca() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 30;
    let scores: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let z: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            [3.0 * z[0], 1.5 * z[1], 0.5 * z[2]]
        })
        .collect();
    let m = DMatrix::from_fn(n, DAYS, |i, d| {
        scores[i][0] * harmonic(1, d) + scores[i][1] * harmonic(2, d) + scores[i][2] * harmonic(3, d)
    });
    let truth = pca(&m, 2);
    let a = analyze(&curves(m), &[tau(0.5)], 2, &ALL).unwrap();
    assert_eq!(a.entries.len(), 3);
    for e in &a.entries {
        let angle = max_angle(&e.components.components, &truth);
        assert!(angle < 1e-6, "{:?}: angle {angle}", e.algorithm);
    }
}

/// Two factors that are usually zero and occasionally large, on top of Gaussian noise
/// spread over many harmonics: tail variation dominates at high levels.
fn planted_tail_curves(seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spike = Bernoulli::new(0.08).unwrap();
    let n = 60;
    let mut m = DMatrix::zeros(n, DAYS);
    for i in 0..n {
        let f1 = if spike.sample(&mut rng) { 6.0 } else { 0.0 };
        let f2 = if spike.sample(&mut rng) { 4.0 } else { 0.0 };
        let noise: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
        for d in 0..DAYS {
            let mut v = f1 * harmonic(1, d) + f2 * harmonic(2, d);
            for (l, z) in noise.iter().enumerate() {
                v += 0.6 * z * harmonic(l + 3, d);
            }
            m[(i, d)] = v;
        }
    }
    m
}

#[test]
fn planted_tail_structure_explains_more_at_high_level() {
    let c = curves(planted_tail_curves(21));
    let a = analyze(&c, &[tau(0.5), tau(0.95)], 2, &ALL).unwrap();
    for alg in ALL {
        let at = |t: f64| {
            a.entries
                .iter()
                .find(|e| e.algorithm == alg && e.tau == tau(t))
                .unwrap()
                .explained[1]
        };
        assert!(at(0.95) > at(0.5), "{alg:?}: {} vs {}", at(0.95), at(0.5));
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let series: Vec<StationSeries> = synthetic_fixture(3, 1990, 4, 9).unwrap().into_iter().map(|p| p.1).collect();
    let taus = [tau(0.05), tau(0.5), tau(0.95)];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut listings = Vec::new();
    for dir in &dirs {
        let out = run_pipeline(&series, &taus, 2, &ALL).unwrap();
        let files = write_outputs(dir.path(), &out).unwrap();
        assert_eq!(files.components.len(), 3);
        let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        listings.push(
            names
                .iter()
                .map(|n| (n.clone(), std::fs::read(dir.path().join(n)).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(listings[0], listings[1]);
    let comp = String::from_utf8(listings[0].iter().find(|(n, _)| n == "components_tau_0.95.csv").unwrap().1.clone()).unwrap();
    let mut lines = comp.lines();
    assert_eq!(lines.next().unwrap(), "day,TD_1,TD_2,BUP_1,BUP_2,PEC_1,PEC_2");
    assert_eq!(lines.count(), DAYS);
}

#[test]
fn csv_round_trip_preserves_series() {
    let series: Vec<StationSeries> = synthetic_fixture(2, 2000, 1, 1).unwrap().into_iter().map(|p| p.1).collect();
    let mut buf = Vec::new();
    write_long_csv(&series, &mut buf).unwrap();
    assert_eq!(read_long_csv(buf.as_slice()).unwrap(), series);
}

#[test]
fn only_leap_days_is_rejected() {
    let dates = vec![NaiveDate::from_ymd_opt(2000, 2, 29).unwrap(), NaiveDate::from_ymd_opt(2004, 2, 29).unwrap()];
    let s = StationSeries::new("x", dates, vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        run_pipeline(&[s], &[tau(0.5)], 1, &[Algorithm::TopDown]),
        Err(WeatherError::NoUsableDays)
    ));
}
