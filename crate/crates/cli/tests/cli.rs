use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use expca::{objective_value, Algorithm, DataMatrix, TauLevel};
use expca_cli::{ExpectileOutput, FitOutput, RunManifest};
use expca_weather::{synthetic_fixture, write_long_csv};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn expca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expca")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fit_json(path: &Path) -> FitOutput {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const M43: &str = "1,2,0\n4,1,3\n0,5,2\n3,3,7\n";

fn m43() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 4.0, 1.0, 3.0, 0.0, 5.0, 2.0, 3.0, 3.0, 7.0])
}

#[test]
fn symmetric_fit_matches_eigen_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "m.csv", M43);
    let y = m43();
    let mean = y.row_mean();
    let c = DMatrix::from_fn(4, 3, |i, j| y[(i, j)] - mean[j]);
    let eig = SymmetricEigen::new(c.transpose() * &c);
    let top = eig.eigenvalues.imax();
    let truth = eig.eigenvectors.column(top).into_owned();
    for alg in ["topdown", "bottomup", "pec"] {
        let out = dir.path().join(format!("{alg}.json"));
        let o = expca(&["fit", "--input", s(&input), "--tau", "0.5", "--k", "1", "--algorithm", alg, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let f = fit_json(&out);
        let phi = DVector::from_vec(f.components[0].clone());
        assert!(1.0 - phi.dot(&truth).abs() < 1e-12, "{alg}");
        for (a, b) in f.center.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out.with_extension("manifest.json").exists());
    }
}

#[test]
fn empty_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "e.csv", "");
    let o = expca(&["fit", "--input", s(&input)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty matrix"));
}

#[test]
fn malformed_csv_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "b.csv", "1,2,3\n4,five,6\n");
    let o = expca(&["fit", "--input", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2, column 2"), "{}", stderr(&o));
    let ragged = write(dir.path(), "r.csv", "1,2,3\n4,5\n");
    let o = expca(&["fit", "--input", s(&ragged)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2: expected 3 fields, found 2"), "{}", stderr(&o));
}

#[test]
fn k_must_be_below_column_count() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "m.csv", M43);
    let o = expca(&["fit", "--input", s(&input), "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let o = expca(&["fit", "--input", s(&input), "--tau", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rank_one_fit_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "r1.csv", "1,2,3\n2,4,6\n-1,-2,-3\n5,10,15\n");
    for alg in ["topdown", "bottomup", "pec"] {
        let out = dir.path().join(format!("{alg}.json"));
        let o = expca(&["fit", "--input", s(&input), "--tau", "0.9", "--k", "1", "--algorithm", alg, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{alg}: {}", stderr(&o));
        let f = fit_json(&out);
        assert!(f.converged);
        assert!(f.objective < 1e-20, "{alg}: {}", f.objective);
    }
}

#[test]
fn fit_json_round_trips_the_objective() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = (0..15)
        .map(|i| {
            (0..6)
                .map(|j| (((i * 37 + j * 11) % 17) as f64 * 0.37 - 2.0 + (i * j) as f64 * 0.05).to_string())
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    let input = write(dir.path(), "m.csv", &text);
    let y = DataMatrix::new(DMatrix::from_fn(15, 6, |i, j| {
        ((i * 37 + j * 11) % 17) as f64 * 0.37 - 2.0 + (i * j) as f64 * 0.05
    }))
    .unwrap();
    for alg in ["topdown", "bottomup", "pec"] {
        let out = dir.path().join(format!("{alg}.json"));
        let o = expca(&["fit", "--input", s(&input), "--tau", "0.8", "--k", "2", "--algorithm", alg, "--out", s(&out)]);
        assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
        let f = fit_json(&out);
        assert_eq!(f.algorithm, alg.parse::<Algorithm>().unwrap());
        let m = DVector::from_vec(f.center.clone());
        let v = DMatrix::from_fn(6, 2, |r, c| f.components[c][r]);
        let u = DMatrix::from_fn(15, 2, |r, c| f.loadings[r][c]);
        let obj = objective_value(&y, &m, &u, &v, TauLevel::new(0.8).unwrap()).unwrap();
        assert!((obj - f.objective).abs() <= 1e-10 * f.objective.max(1.0), "{alg}: {obj} vs {}", f.objective);
        assert_eq!(f.explained_variance.len(), 2);
    }
}

fn expectile_json(args: &[&str]) -> ExpectileOutput {
    let o = expca(args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn expectile_examples() {
    let e = expectile_json(&["expectile", "--values", "0,1", "--tau", "0.8"]);
    assert!((e.expectile - 0.8).abs() < 1e-12);
    let e = expectile_json(&["expectile", "--values", "5", "--tau", "0.3"]);
    assert_eq!((e.expectile, e.quantile), (5.0, 5.0));
    assert_eq!((e.tau_variance, e.tau_deviation, e.asymptotic_variance), (0.0, 0.0, 0.0));
    let e = expectile_json(&["expectile", "--values", "1,2,3", "--tau", "0.5"]);
    assert!((e.expectile - 2.0).abs() < 1e-12);
    assert_eq!(e.quantile, 2.0);
    let e = expectile_json(&["expectile", "--values", "-1,-3"]);
    assert_eq!(e.expectile, -2.0);
}

#[test]
fn expectile_reads_a_csv_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "v.csv", "a,b\n9,1\n9,2\n9,3\n");
    let e = expectile_json(&["expectile", "--input", s(&input), "--column", "2", "--header"]);
    assert_eq!(e.n, 3);
    assert!((e.expectile - 2.0).abs() < 1e-12);
    let o = expca(&["expectile", "--input", s(&input), "--column", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1, column 2"), "{}", stderr(&o));
}

#[test]
fn non_numeric_values_exit_1() {
    assert_eq!(expca(&["expectile", "--values", "1,x"]).status.code(), Some(1));
    assert_eq!(expca(&["expectile"]).status.code(), Some(1));
}

#[test]
fn help_documents_exit_codes() {
    let o = expca(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Exit status") && text.contains("did not converge"));
    assert_eq!(expca(&["frobnicate"]).status.code(), Some(1));
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        let rel = e.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_byte_identical_under_a_fixed_seed() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = expca(&[
            "simulate", "--replications", "1", "--seed", "42", "--tau", "0.5,0.95", "--out", s(d.path()),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let [a, b] = [read_dir_sorted(dirs[0].path()), read_dir_sorted(dirs[1].path())];
    let data = |v: &[(String, Vec<u8>)]| v.iter().filter(|(n, _)| n != "manifest.json").cloned().collect::<Vec<_>>();
    assert_eq!(data(&a), data(&b));
    assert_eq!(a.iter().filter(|(n, _)| n.starts_with("curves")).count(), 6);

    let mut m = [manifest(&dirs[0].path().join("manifest.json")), manifest(&dirs[1].path().join("manifest.json"))];
    for (mm, d) in m.iter_mut().zip(&dirs) {
        assert_eq!(mm.parameters.remove("out"), Some(serde_json::json!(s(d.path()))));
        mm.wall_seconds = 0.0;
    }
    assert_eq!(m[0], m[1]);
    assert_eq!(m[0].seed, 42);

    let csv = std::fs::read_to_string(dirs[0].path().join("reports.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "setting,scenario,size,tau,algorithm,mean_mse,sd_mse,noncvg_rate,mean_seconds"
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn simulate_rejects_unknown_enumerations() {
    let d = tempfile::tempdir().unwrap();
    for bad in [["--scenario", "6"], ["--setting", "3"], ["--size", "huge"], ["--algorithm", "svd"]] {
        let o = expca(&["simulate", bad[0], bad[1], "--out", s(d.path())]);
        assert_eq!(o.status.code(), Some(1), "{bad:?}");
    }
}

#[test]
fn config_file_fills_gaps_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "m.csv", M43);
    let config = write(
        dir.path(),
        "c.toml",
        &format!("threads = 1\n[fit]\ninput = {:?}\ntau = 0.9\nk = 2\nalgorithm = \"bottomup\"\n", s(&input)),
    );
    let out = dir.path().join("f.json");
    let o = expca(&["fit", "--config", s(&config), "--k", "1", "--out", s(&out)]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    let f = fit_json(&out);
    assert_eq!((f.tau, f.k, f.algorithm), (0.9, 1, Algorithm::BottomUp));

    let bad = write(dir.path(), "bad.toml", "[fit]\nbogus = 1\n");
    assert_eq!(expca(&["fit", "--config", s(&bad)]).status.code(), Some(1));
}

#[test]
fn weather_round_trip_through_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = synthetic_fixture(2, 1961, 40, 3).unwrap();
    let series: Vec<_> = fixture.iter().map(|(_, s)| s.clone()).collect();
    let input = dir.path().join("stations.csv");
    write_long_csv(&series, std::fs::File::create(&input).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = expca(&["weather", "--input", s(&input), "--tau", "0.05,0.5,0.95", "--k", "2", "--out", s(&out)]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));

    for t in ["0.05", "0.5", "0.95"] {
        let text = std::fs::read_to_string(out.join(format!("components_tau_{t}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "day,BUP_1,BUP_2,TD_1,TD_2,PEC_1,PEC_2");
        assert_eq!(lines.count(), 365);
    }
    let mut rdr = csv::Reader::from_path(out.join("detrend.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for (rec, (model, _)) in rdr.records().zip(&fixture) {
        let rec = rec.unwrap();
        let get = |name: &str| rec[col(name)].parse::<f64>().unwrap();
        assert_eq!(&rec[0], model.station_id);
        for j in 1..=10 {
            assert!((get(&format!("beta{j}")) - model.ar[j - 1]).abs() < 0.05);
        }
        for (l, (c, d)) in [("c1", "d1"), ("c2", "d2")].iter().enumerate() {
            let amp = get(c).hypot(get(d));
            let truth = model.seasonal.amplitude(l + 1);
            assert!((amp - truth).abs() < 0.05 * truth);
        }
    }
    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m.command, "weather");
    assert_eq!(m.parameters["stations"], serde_json::json!(2));
    assert_eq!(m.convergence.len(), 9);
    for f in ["centers.csv", "curves.csv", "explained_variance.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn weather_rejects_leap_day_only_and_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let leap = write(dir.path(), "leap.csv", "station_id,date,temp\nA,2000-02-29,1.5\nA,2004-02-29,2.0\n");
    let o = expca(&["weather", "--input", s(&leap), "--out", s(&dir.path().join("o1"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no usable days"), "{}", stderr(&o));

    let bad = write(dir.path(), "bad.csv", "station_id,date,temp\nA,2000-01-01,1.5\nA,2000-01-02,warm\n");
    let o = expca(&["weather", "--input", s(&bad), "--out", s(&dir.path().join("o2"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}
