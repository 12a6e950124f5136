//! Ground-truth cloud-factor fields and the prediction error metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MissionGrid, Point};
use crate::io::write_blocks;

/// A time series of cloud-factor frames over a mission grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    grid: MissionGrid,
    horizon: usize,
    values: Vec<f64>,
}

impl FieldSeries {
    /// Builds a series from frame-major values (`t * nx * ny + j * nx + i`).
    pub fn new(grid: MissionGrid, horizon: usize, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if horizon == 0 {
            return Err(Error::InvalidParameter("field horizon must be >= 1".into()));
        }
        if values.len() != horizon * grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} frames of {} cells",
                values.len(),
                horizon,
                grid.len()
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let t = k / grid.len();
                let (i, j) = grid.coords(k % grid.len());
                return Err(Error::OutOfRange { t, i, j, value: v });
            }
        }
        Ok(Self { grid, horizon, values })
    }

    /// Field that takes the same value everywhere at all times.
    pub fn constant(grid: MissionGrid, horizon: usize, cf: f64) -> Result<Self> {
        Self::new(grid, horizon, vec![cf; horizon * grid.len()])
    }

    pub fn grid(&self) -> &MissionGrid {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn frame(&self, t: usize) -> Result<&[f64]> {
        if t >= self.horizon {
            return Err(Error::StepOutOfRange { t, horizon: self.horizon });
        }
        let n = self.grid.len();
        Ok(&self.values[t * n..(t + 1) * n])
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.values[t * self.grid.len() + self.grid.index(i, j)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Point measurement at `q`: the value of the nearest cell, with `q`
    /// clamped into the mission space first.
    pub fn sample_at(&self, q: Point, t: usize) -> Result<f64> {
        let frame = self.frame(t)?;
        let (i, j) = self.grid.nearest_cell(q);
        Ok(frame[self.grid.index(i, j)])
    }

    /// Writes the series in the block CSV layout.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let n = self.grid.len();
        write_blocks(w, &self.grid, (0..self.horizon).map(|t| (t, &self.values[t * n..(t + 1) * n])))
    }
}

/// Predicted cloud factor over the grid for one target step. Values are not
/// clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub grid: MissionGrid,
    pub t: usize,
    pub values: Vec<f64>,
}

impl PredictionGrid {
    pub fn clamped(&self) -> Self {
        Self { values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(), ..self.clone() }
    }
}

/// Root-mean-square error between the true frame at `t` and a prediction.
pub fn rmse_at(truth: &FieldSeries, pred: &PredictionGrid, t: usize) -> Result<f64> {
    if truth.grid() != &pred.grid || pred.values.len() != pred.grid.len() {
        return Err(Error::ShapeMismatch("prediction grid does not match field grid".into()));
    }
    rmse(truth.frame(t)?, &pred.values)
}

/// Root-mean-square difference of two equally shaped frames. Cells have equal
/// area, so the area-normalized integral is the cell mean.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("frames of length {} and {}", a.len(), b.len())));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Time-averaged error: the plain mean of `rmse[t]` for `t` in `t0..=t_end`.
/// `rmse` is indexed by absolute step.
pub fn time_avg_error(rmse: &[f64], t0: usize, t_end: usize) -> Result<f64> {
    if t0 >= t_end || t_end >= rmse.len() {
        return Err(Error::EmptyRange);
    }
    let window = &rmse[t0..=t_end];
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

/// Trapezoid-rule time average over `t0..=t_end`, for cross-checking.
pub fn time_avg_error_trapezoid(rmse: &[f64], t0: usize, t_end: usize) -> Result<f64> {
    if t0 >= t_end || t_end >= rmse.len() {
        return Err(Error::EmptyRange);
    }
    let w = &rmse[t0..=t_end];
    let inner: f64 = w.windows(2).map(|p| 0.5 * (p[0] + p[1])).sum();
    Ok(inner / (t_end - t0) as f64)
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

/// Loads a field from either the record layout (`t,i,j,cf` header) or the
/// block layout (`# t=<k>` separators). The layout is detected from the
/// first non-blank line.
pub fn load_field_csv(path: &Path, grid: MissionGrid) -> Result<FieldSeries> {
    grid.validate()?;
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    let first = lines.iter().position(|l| !l.trim().is_empty());
    let Some(first) = first else {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "empty file".into() });
    };
    let head = lines[first].trim();
    if head.starts_with('#') {
        parse_blocks(path, &lines, grid)
    } else {
        let cols: Vec<String> = head.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
        if cols != ["t", "i", "j", "cf"] {
            return Err(Error::Parse {
                path: path.into(),
                line: first + 1,
                msg: format!("unrecognized header {head:?}; expected `t,i,j,cf` or `# t=<k>`"),
            });
        }
        parse_records(path, &lines[first + 1..], first + 2, grid)
    }
}

fn parse_records(path: &Path, lines: &[String], first_line: usize, grid: MissionGrid) -> Result<FieldSeries> {
    let n = grid.len();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut horizon = 0usize;
    for (k, raw) in lines.iter().enumerate() {
        let lineno = first_line + k;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { path: path.into(), line: lineno, msg };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", parts.len())));
        }
        let idx = |s: &str, name: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {name} {s:?}")));
        let t = idx(parts[0], "t")?;
        let i = idx(parts[1], "i")?;
        let j = idx(parts[2], "j")?;
        let cf: f64 = parts[3].parse().map_err(|_| bad(format!("bad cf {:?}", parts[3])))?;
        if i >= grid.nx || j >= grid.ny {
            return Err(bad(format!("cell ({i},{j}) outside {}x{} grid", grid.nx, grid.ny)));
        }
        if !(0.0..=1.0).contains(&cf) {
            return Err(Error::OutOfRange { t, i, j, value: cf });
        }
        if t >= horizon {
            horizon = t + 1;
            cells.resize(horizon * n, None);
        }
        cells[t * n + grid.index(i, j)] = Some(cf);
    }
    if horizon == 0 {
        return Err(Error::Parse { path: path.into(), line: first_line, msg: "no records".into() });
    }
    collect_cells(cells, grid, horizon)
}

fn parse_blocks(path: &Path, lines: &[String], grid: MissionGrid) -> Result<FieldSeries> {
    let n = grid.len();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut horizon = 0usize;
    let mut k = 0usize;
    while k < lines.len() {
        let line = lines[k].trim();
        if line.is_empty() {
            k += 1;
            continue;
        }
        let lineno = k + 1;
        let t = line
            .strip_prefix('#')
            .map(str::trim)
            .and_then(|rest| rest.strip_prefix("t="))
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse { path: path.into(), line: lineno, msg: format!("expected `# t=<k>`, found {line:?}") })?;
        if t >= horizon {
            horizon = t + 1;
            cells.resize(horizon * n, None);
        }
        k += 1;
        for j in 0..grid.ny {
            let lineno = k + 1;
            let row = lines.get(k).map(|s| s.trim()).unwrap_or("");
            if row.is_empty() || row.starts_with('#') {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("block t={t} has {j} rows, expected {}", grid.ny),
                });
            }
            let vals: Vec<&str> = row.split(',').map(str::trim).collect();
            if vals.len() != grid.nx {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("expected {} values, found {}", grid.nx, vals.len()),
                });
            }
            for (i, s) in vals.iter().enumerate() {
                let cf: f64 = s.parse().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("bad value {s:?}"),
                })?;
                if !(0.0..=1.0).contains(&cf) {
                    return Err(Error::OutOfRange { t, i, j, value: cf });
                }
                cells[t * n + grid.index(i, j)] = Some(cf);
            }
            k += 1;
        }
    }
    if horizon == 0 {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "no blocks".into() });
    }
    collect_cells(cells, grid, horizon)
}

fn collect_cells(cells: Vec<Option<f64>>, grid: MissionGrid, horizon: usize) -> Result<FieldSeries> {
    let n = grid.len();
    let mut values = Vec::with_capacity(cells.len());
    // report the first gap in (t, i, j) order
    for t in 0..horizon {
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                if cells[t * n + grid.index(i, j)].is_none() {
                    return Err(Error::MissingCell { t, i, j });
                }
            }
        }
    }
    values.extend(cells.into_iter().map(|c| c.unwrap()));
    FieldSeries::new(grid, horizon, values)
}

// ---------------------------------------------------------------------------
// Synthetic fields
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Standard,
    Sunny,
    Cloudy,
    #[serde(alias = "very-cloudy")]
    VeryCloudy,
}

impl Weather {
    pub const ALL: [Weather; 4] = [Weather::Standard, Weather::Sunny, Weather::Cloudy, Weather::VeryCloudy];

    pub fn name(&self) -> &'static str {
        match self {
            Weather::Standard => "standard",
            Weather::Sunny => "sunny",
            Weather::Cloudy => "cloudy",
            Weather::VeryCloudy => "very_cloudy",
        }
    }
}

impl std::fmt::Display for Weather {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "standard" => Ok(Weather::Standard),
            "sunny" => Ok(Weather::Sunny),
            "cloudy" => Ok(Weather::Cloudy),
            "very_cloudy" | "verycloudy" => Ok(Weather::VeryCloudy),
            other => Err(Error::InvalidParameter(format!("unknown weather preset {other:?}"))),
        }
    }
}

/// Knobs of the advecting-blob generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub blobs: usize,
    /// Peak amplitude range.
    pub amplitude: (f64, f64),
    /// Blob standard deviation range along the major axis (m).
    pub size: (f64, f64),
    /// Minor/major axis ratio range.
    pub aspect: (f64, f64),
    /// Shared drift speed range (m/step).
    pub speed: (f64, f64),
    /// Relative amplitude modulation depth in [0, 1).
    pub modulation: f64,
    /// Modulation period range (steps).
    pub period: (f64, f64),
}

impl SynthParams {
    pub fn preset(weather: Weather) -> Self {
        let base = SynthParams {
            blobs: 30,
            amplitude: (0.3, 0.7),
            size: (0.2, 0.45),
            aspect: (0.5, 1.0),
            speed: (0.02, 0.05),
            modulation: 0.3,
            period: (40.0, 120.0),
        };
        match weather {
            Weather::Sunny => SynthParams { blobs: 15, amplitude: (0.2, 0.5), ..base },
            Weather::Standard => base,
            Weather::Cloudy => SynthParams { blobs: 40, amplitude: (0.4, 0.9), ..base },
            Weather::VeryCloudy => SynthParams { blobs: 60, amplitude: (0.5, 1.0), ..base },
        }
    }
}

struct Blob {
    center: Point,
    velocity: Point,
    sx: f64,
    sy: f64,
    cos: f64,
    sin: f64,
    amp: f64,
    freq: f64,
    phase: f64,
}

/// Generates a seeded synthetic field for a weather preset.
pub fn synth_cloud_field(grid: MissionGrid, steps: usize, seed: u64, weather: Weather) -> Result<FieldSeries> {
    synth_cloud_field_with(grid, steps, seed, &SynthParams::preset(weather))
}

/// Sum of anisotropic Gaussian blobs drifting with a shared wind on a torus
/// slightly larger than the mission space, clamped to [0, 1].
pub fn synth_cloud_field_with(grid: MissionGrid, steps: usize, seed: u64, p: &SynthParams) -> Result<FieldSeries> {
    grid.validate()?;
    if steps == 0 {
        return Err(Error::InvalidParameter("synthetic field needs at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 3.0 * p.size.1;
    let lo = [grid.q1_min - margin, grid.q2_min - margin];
    let period = [grid.q1_max - grid.q1_min + 2.0 * margin, grid.q2_max - grid.q2_min + 2.0 * margin];

    let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = uniform(&mut rng, p.speed);
    let wind = [speed * heading.cos(), speed * heading.sin()];

    let blobs: Vec<Blob> = (0..p.blobs)
        .map(|_| {
            let center = [lo[0] + rng.gen::<f64>() * period[0], lo[1] + rng.gen::<f64>() * period[1]];
            let jitter = 0.2 * speed;
            let velocity = [
                wind[0] + rng.gen_range(-1.0..=1.0) * jitter,
                wind[1] + rng.gen_range(-1.0..=1.0) * jitter,
            ];
            let sx = uniform(&mut rng, p.size);
            let sy = sx * uniform(&mut rng, p.aspect);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let amp = uniform(&mut rng, p.amplitude);
            let freq = std::f64::consts::TAU / uniform(&mut rng, p.period);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            Blob { center, velocity, sx, sy, cos: angle.cos(), sin: angle.sin(), amp, freq, phase }
        })
        .collect();

    let centers = grid.centers();
    let n = grid.len();
    let mut values = vec![0.0; steps * n];
    values.par_chunks_mut(n).enumerate().for_each(|(t, frame)| {
        let tf = t as f64;
        for b in &blobs {
            let c = [
                lo[0] + (b.center[0] - lo[0] + b.velocity[0] * tf).rem_euclid(period[0]),
                lo[1] + (b.center[1] - lo[1] + b.velocity[1] * tf).rem_euclid(period[1]),
            ];
            let amp = b.amp * (1.0 + p.modulation * (b.freq * tf + b.phase).sin());
            // beyond 6 major-axis deviations the contribution is below 1e-7
            let reach = 6.0 * b.sx;
            for (v, q) in frame.iter_mut().zip(&centers) {
                let dx = wrap(q[0] - c[0], period[0]);
                let dy = wrap(q[1] - c[1], period[1]);
                if dx.abs() > reach || dy.abs() > reach {
                    continue;
                }
                let u = (b.cos * dx + b.sin * dy) / b.sx;
                let w = (-b.sin * dx + b.cos * dy) / b.sy;
                *v += amp * (-0.5 * (u * u + w * w)).exp();
            }
        }
        for v in frame.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    });
    FieldSeries::new(grid, steps, values)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Minimum-image displacement on a circle of circumference `period`.
fn wrap(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MissionGrid {
        MissionGrid::new(0.0, 1.0, 0.0, 1.0, 4, 3).unwrap()
    }

    fn ramp(grid: MissionGrid, horizon: usize) -> FieldSeries {
        let n = grid.len();
        let values = (0..horizon * n).map(|k| (k % 97) as f64 / 96.0).collect();
        FieldSeries::new(grid, horizon, values).unwrap()
    }

    #[test]
    fn rejects_out_of_range_values() {
        let g = small();
        let mut v = vec![0.5; g.len()];
        v[3] = 1.2;
        assert!(matches!(FieldSeries::new(g, 1, v), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn sample_at_center_and_outside() {
        let g = small();
        let f = ramp(g, 2);
        let c = g.center(2, 1);
        assert_eq!(f.sample_at(c, 1).unwrap(), f.get(1, 2, 1));
        // 0.1 m past the right edge lands on the boundary column
        assert_eq!(f.sample_at([1.1, c[1]], 0).unwrap(), f.get(0, 3, 1));
        // midpoint between (0,0) and (1,0) resolves to the lower index
        let mid = [0.25, g.center(0, 0)[1]];
        assert_eq!(f.sample_at(mid, 0).unwrap(), f.get(0, 0, 0));
        assert!(matches!(f.sample_at(c, 2), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn rmse_examples() {
        let g = MissionGrid::new(0.0, 2.0, 0.0, 1.0, 2, 1).unwrap();
        let truth = FieldSeries::constant(g, 1, 0.0).unwrap();
        let pred = PredictionGrid { grid: g, t: 0, values: vec![0.3, 0.4] };
        let e = rmse_at(&truth, &pred, 0).unwrap();
        assert!((e - (0.125f64).sqrt()).abs() < 1e-15);
        assert!((e - 0.353_553_390_593_273_7).abs() < 1e-12);

        let f = ramp(small(), 1);
        let same = PredictionGrid { grid: small(), t: 0, values: f.frame(0).unwrap().to_vec() };
        assert_eq!(rmse_at(&f, &same, 0).unwrap(), 0.0);
        let shifted = PredictionGrid { values: same.values.iter().map(|v| v + 0.1).collect(), ..same.clone() };
        assert!((rmse_at(&f, &shifted, 0).unwrap() - 0.1).abs() < 1e-12);

        let wrong = PredictionGrid { grid: g, t: 0, values: vec![0.0; 2] };
        assert!(rmse_at(&f, &wrong, 0).is_err());
    }

    #[test]
    fn time_average_examples() {
        assert!((time_avg_error(&[0.2; 10], 1, 9).unwrap() - 0.2).abs() < 1e-15);
        assert!((time_avg_error(&[0.1, 0.3], 0, 1).unwrap() - 0.2).abs() < 1e-15);
        assert!(time_avg_error(&[0.1, 0.3], 1, 1).is_err());
        assert!(time_avg_error(&[0.1, 0.3], 0, 2).is_err());
    }

    #[test]
    fn trapezoid_and_mean_agree_on_long_series() {
        let series: Vec<f64> = (0..=100).map(|t| 0.15 + 0.03 * (t as f64 * 0.2).sin()).collect();
        let a = time_avg_error(&series, 1, 100).unwrap();
        let b = time_avg_error_trapezoid(&series, 1, 100).unwrap();
        assert!((a - b).abs() / a < 1e-2);
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let g = MissionGrid::new(-1.0, 1.0, -1.0, 1.0, 20, 15).unwrap();
        let a = synth_cloud_field(g, 10, 1, Weather::Sunny).unwrap();
        let b = synth_cloud_field(g, 10, 1, Weather::Sunny).unwrap();
        assert_eq!(a, b);
        let c = synth_cloud_field(g, 10, 2, Weather::Sunny).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_without_blobs_is_clear_sky() {
        let g = small();
        let p = SynthParams { blobs: 0, ..SynthParams::preset(Weather::Sunny) };
        let f = synth_cloud_field_with(g, 5, 3, &p).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weather_names_round_trip() {
        for w in Weather::ALL {
            assert_eq!(w.name().parse::<Weather>().unwrap(), w);
        }
        assert_eq!("very-cloudy".parse::<Weather>().unwrap(), Weather::VeryCloudy);
        assert!("stormy".parse::<Weather>().is_err());
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_record_layout_unsorted() {
        let g = MissionGrid::new(0.0, 1.0, 0.0, 1.0, 2, 1).unwrap();
        let f = write_tmp("t,i,j,cf\n1,1,0,0.4\n0,0,0,0.1\n0,1,0,0.2\n1,0,0,0.3\n");
        let s = load_field_csv(f.path(), g).unwrap();
        assert_eq!(s.horizon(), 2);
        assert_eq!(s.frame(1).unwrap(), &[0.3, 0.4]);
    }

    #[test]
    fn single_zero_step_loads() {
        let g = MissionGrid::new(0.0, 1.0, 0.0, 1.0, 3, 2).unwrap();
        let f = write_tmp("# t=0\n0,0,0\n0,0,0\n");
        let s = load_field_csv(f.path(), g).unwrap();
        assert_eq!(s.horizon(), 1);
        assert!(s.frame(0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_cell_is_named() {
        let g = MissionGrid::new(0.0, 1.0, 0.0, 1.0, 6, 6).unwrap();
        let mut text = String::from("t,i,j,cf\n");
        for i in 0..6 {
            for j in 0..6 {
                if (i, j) != (5, 5) {
                    text.push_str(&format!("0,{i},{j},0.5\n"));
                }
            }
        }
        let f = write_tmp(&text);
        let err = load_field_csv(f.path(), g).unwrap_err();
        assert!(matches!(err, Error::MissingCell { t: 0, i: 5, j: 5 }), "{err}");
        assert!(err.to_string().contains("missing cell"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let g = MissionGrid::new(0.0, 1.0, 0.0, 1.0, 2, 1).unwrap();
        let f = write_tmp("t,i,j,cf\n0,0,0,0.1\n0,1,zero,0.2\n");
        match load_field_csv(f.path(), g).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let f = write_tmp("# t=0\n0.1,0.2\n# t=1\n0.1\n");
        match load_field_csv(f.path(), g).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_csv_rejected() {
        let g = MissionGrid::new(0.0, 1.0, 0.0, 1.0, 2, 1).unwrap();
        let f = write_tmp("t,i,j,cf\n0,0,0,0.1\n0,1,0,1.5\n");
        assert!(matches!(load_field_csv(f.path(), g), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn block_writer_reloads() {
        let g = MissionGrid::new(-1.0, 1.0, 0.0, 2.0, 5, 4).unwrap();
        let s = synth_cloud_field(g, 3, 9, Weather::Cloudy).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let f = write_tmp(std::str::from_utf8(&buf).unwrap());
        let back = load_field_csv(f.path(), g).unwrap();
        for (a, b) in s.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 5e-9);
        }
    }
}
