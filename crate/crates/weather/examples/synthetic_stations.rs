//! Writes a synthetic long-format station CSV to standard output.
//!
//! Usage: `synthetic_stations [stations] [years] [seed]` (defaults 2, 40, 1).

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), expca_weather::WeatherError> {
    let series: Vec<_> = expca_weather::synthetic_fixture(arg(1, 2), 1961, arg(2, 40), arg(3, 1))?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    expca_weather::write_long_csv(&series, std::io::stdout().lock())
}
