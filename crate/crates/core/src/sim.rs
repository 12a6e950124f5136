//! Closed-loop scenario runner.
//!
//! Every planning step `t`: agents sample the true field, the kriging system
//! is rebuilt from the sliding window and evaluated over the grid for `t+1`,
//! the prediction is scored against the truth at `t+1`, and (for mobile
//! methods) agents move under the switched coverage law before the
//! information map is advanced.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Dynamics, InitMode, Method, ScenarioConfig};
use crate::coverage::{
    control_switched, info_advance, lloyd_placement, objective_h, repulsion, AgentState, Branch, CoverageParams,
    InformationMap,
};
use crate::dynamics::{saturate, step_integrator, step_unicycle, Caps};
use crate::error::{Error, Result};
use crate::field::{rmse_at, time_avg_error, FieldSeries};
use crate::grid::{GridMap, MissionGrid, Point};
use crate::io::{fmt_g9, write_blocks};
use crate::kriging::{KernelParams, KrigingSystem, Sample, SampleBuffer, SpatioTemporalPoint};

/// Reference parameter set per method: kernel plus `(k, k_hat, delta)`.
///
/// The tabulated primary gains apply to a plain sum over plant cells; the
/// controller here integrates over area, so `k` is divided by the plant cell
/// area to give the same velocity field.
pub fn reference_params(method: Method) -> (KernelParams, Option<(f64, f64, f64)>) {
    let area = MissionGrid::plant().cell_area();
    match method {
        Method::Fixed => (KernelParams { sigma: 0.297397, tau: 0.119574, beta: 0.0003665 }, None),
        Method::Baseline => (
            KernelParams { sigma: 0.166996, tau: 0.303474, beta: 0.211844 },
            Some((0.016427 / area, 0.268257, -0.138640)),
        ),
        Method::Proposed => (
            KernelParams { sigma: 0.202815, tau: 0.329897, beta: 0.169103 },
            Some((0.057800 / area, 0.399603, -0.209257)),
        ),
    }
}

/// Copies the reference parameters of `method` into `cfg`.
pub fn apply_reference_params(cfg: &mut ScenarioConfig, method: Method) {
    let (kp, cov) = reference_params(method);
    cfg.kernel = kp;
    if let Some((k, k_hat, delta)) = cov {
        cfg.coverage = CoverageParams { k, k_hat, delta, ..cfg.coverage };
    }
}

/// One logged prediction step; `t` is the predicted (target) step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub rmse: f64,
    /// Whether the window held `L` full steps when the prediction was made.
    pub in_window: bool,
    /// Coverage objective after the information update of this step.
    pub objective: f64,
    pub mean_phi: f64,
    pub max_phi: f64,
    /// Agent positions at step `t` (where the next samples are taken).
    pub positions: Vec<Point>,
    /// Branch of the switched law that produced the move; `None` when the
    /// agents do not move.
    pub branches: Vec<Option<Branch>>,
}

/// Finite-difference bounds on the importance map over full-window steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub max_dphi: f64,
    pub max_d2phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub dissimilarity: GridMap,
    pub information: GridMap,
    pub prediction: GridMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub method: Method,
    pub label: String,
    pub n: usize,
    pub seed: u64,
    pub t0: usize,
    pub t_end: usize,
    /// Initial agent positions.
    pub initial: Vec<Point>,
    pub records: Vec<StepRecord>,
    /// Time-averaged RMSE over the in-window records.
    pub e: f64,
    pub diagnostics: Diagnostics,
    pub snapshots: Vec<Snapshot>,
}

impl RunLog {
    /// Recomputes `E` from the logged RMSE series.
    pub fn recompute_e(&self) -> Result<f64> {
        let first = self.records.iter().find(|r| r.in_window).ok_or(Error::EmptyRange)?.t;
        let mut series = vec![f64::NAN; self.t_end + 1];
        for r in &self.records {
            series[r.t] = r.rmse;
        }
        time_avg_error(&series, first, self.t_end)
    }

    pub fn rmse_series(&self) -> Vec<(usize, f64)> {
        self.records.iter().map(|r| (r.t, r.rmse)).collect()
    }
}

/// Loads the configured field and runs the scenario on it.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    cfg.validate()?;
    let field = cfg.field.load()?;
    run_scenario_with_field(cfg, &field)
}

pub fn initial_positions(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Point>> {
    let grid = cfg.field.grid()?;
    let n = cfg.agents.n;
    let random = |rng: &mut ChaCha8Rng| {
        let b = cfg.agents.random_box;
        (0..n).map(|_| grid.clamp([rng.gen_range(b[0]..b[1]), rng.gen_range(b[2]..b[3])])).collect::<Vec<_>>()
    };
    Ok(match cfg.agents.init {
        InitMode::Explicit => cfg.agents.positions.iter().map(|p| grid.clamp(*p)).collect(),
        InitMode::Lloyd => lloyd_placement(&grid, n, cfg.sim.seed)?,
        InitMode::Random => random(rng),
        InitMode::Auto => match cfg.sim.method {
            Method::Fixed => lloyd_placement(&grid, n, cfg.sim.seed)?,
            _ if cfg.agents.positions.len() == n => cfg.agents.positions.iter().map(|p| grid.clamp(*p)).collect(),
            _ => random(rng),
        },
    })
}

fn non_finite(step: usize, what: &str) -> Error {
    Error::NonFinite { step, what: what.to_string() }
}

pub fn run_scenario_with_field(cfg: &ScenarioConfig, field: &FieldSeries) -> Result<RunLog> {
    cfg.validate()?;
    let grid = cfg.field.grid()?;
    if field.grid() != &grid {
        return Err(Error::ShapeMismatch(format!(
            "field grid {}x{} does not match configured grid {}x{}",
            field.grid().nx,
            field.grid().ny,
            grid.nx,
            grid.ny
        )));
    }
    let sim = &cfg.sim;
    let offset = cfg.field.offset;
    if offset + sim.t_end >= field.horizon() {
        return Err(Error::StepOutOfRange { t: offset + sim.t_end, horizon: field.horizon() });
    }
    if sim.t_end < sim.window {
        return Err(Error::Config(format!(
            "sim.t_end ({}) must be >= sim.window ({}) so that some predictions use a full window",
            sim.t_end, sim.window
        )));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let mut ctrl_rng = ChaCha8Rng::seed_from_u64(sim.seed);
    ctrl_rng.set_stream(1);

    let n = cfg.agents.n;
    let initial = initial_positions(cfg, &mut init_rng)?;
    let mut agents: Vec<AgentState> = initial.iter().enumerate().map(|(id, p)| AgentState::new(id, *p)).collect();
    let mut u_prev = vec![[0.0, 0.0]; n];
    let mut v_prev = vec![0.0; n];
    let mut info = InformationMap::zeros(grid, cfg.coverage.i_ref);
    let mut buffer = SampleBuffer::new(sim.window, n)?;
    let caps = Caps { v_max: sim.v_max, accel_max: sim.accel_max };
    let mobile = sim.method != Method::Fixed;
    let uniform = GridMap::filled(grid, 1.0);

    let mut records = Vec::with_capacity(sim.t_end + 1 - sim.t0);
    let mut snapshots = Vec::new();
    let mut diagnostics = Diagnostics::default();
    // Importance maps of the last two full-window steps.
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(3);

    for t in 0..sim.t_end {
        let samples = agents
            .iter()
            .map(|a| {
                Ok(Sample { z: SpatioTemporalPoint::at(a.p, t as f64), cf: field.sample_at(a.p, offset + t)? })
            })
            .collect::<Result<Vec<_>>>()?;
        buffer.push_step(samples)?;
        let full = buffer.is_full();

        let system = KrigingSystem::new(&buffer, &cfg.kernel)?;
        let eval = system.evaluate_grid(&grid, t + 1);
        let importance = match sim.method {
            Method::Proposed => eval.dissimilarity.map,
            _ => uniform.clone(),
        };
        if importance.values.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(t, "dissimilarity map"));
        }

        if full && sim.method == Method::Proposed && t + 1 >= sim.t0 {
            history.push(importance.values.clone());
            if history.len() > 3 {
                history.remove(0);
            }
            let k = history.len();
            if k >= 2 {
                let (a, b) = (&history[k - 2], &history[k - 1]);
                let d1 = a.iter().zip(b).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max);
                diagnostics.max_dphi = diagnostics.max_dphi.max(d1);
            }
            if k == 3 {
                let d2 = (0..grid.len())
                    .map(|i| (history[2][i] - 2.0 * history[1][i] + history[0][i]).abs())
                    .fold(0.0, f64::max);
                diagnostics.max_d2phi = diagnostics.max_d2phi.max(d2);
            }
        }

        let pred = if sim.clamp_predictions { eval.prediction.clamped() } else { eval.prediction };

        let mut branches = vec![None; n];
        if mobile {
            let snapshot = agents.clone();
            let mut next = Vec::with_capacity(n);
            for (i, agent) in snapshot.iter().enumerate() {
                let (u_cov, branch) = control_switched(agent, &info, &importance, &cfg.coverage, &mut ctrl_rng);
                let mut u = u_cov;
                if cfg.agents.repulsion {
                    let rep = repulsion(
                        agent,
                        &snapshot,
                        cfg.agents.safety_radius,
                        cfg.agents.repulsion_gain,
                        sim.v_max,
                        &mut ctrl_rng,
                    );
                    u = [u[0] + rep[0], u[1] + rep[1]];
                }
                u = saturate(u, sim.v_max);
                let (waypoint, applied) = step_integrator(agent, u, u_prev[i], &caps, 1.0, &grid);
                u_prev[i] = applied;
                let moved = match sim.dynamics {
                    Dynamics::Integrator => waypoint,
                    Dynamics::Unicycle => {
                        let (mut s, v) = step_unicycle(agent, waypoint.p, &sim.unicycle, v_prev[i]);
                        v_prev[i] = v;
                        s.p = grid.clamp(s.p);
                        s
                    }
                };
                if !(moved.p[0].is_finite() && moved.p[1].is_finite()) {
                    return Err(non_finite(t, &format!("position of agent {i}")));
                }
                branches[i] = Some(branch);
                next.push(moved);
            }
            agents = next;
        }
        info = info_advance(&info, &agents, &cfg.coverage)?;

        if t + 1 < sim.t0 {
            continue;
        }
        let rmse = rmse_at(field, &pred, offset + t + 1)?;
        if !rmse.is_finite() {
            return Err(non_finite(t, "rmse"));
        }
        let objective = objective_h(&info, &importance)?;
        if !objective.is_finite() {
            return Err(non_finite(t, "objective"));
        }
        if sim.snapshot_every > 0 && (t + 1) % sim.snapshot_every == 0 {
            snapshots.push(Snapshot {
                t: t + 1,
                dissimilarity: importance.clone(),
                information: info.map.clone(),
                prediction: GridMap { grid, values: pred.values.clone() },
            });
        }
        records.push(StepRecord {
            t: t + 1,
            rmse,
            in_window: full,
            objective,
            mean_phi: importance.mean(),
            max_phi: importance.max(),
            positions: agents.iter().map(|a| a.p).collect(),
            branches,
        });
    }

    let mut log = RunLog {
        method: sim.method,
        label: cfg.field.label(),
        n,
        seed: sim.seed,
        t0: sim.t0,
        t_end: sim.t_end,
        initial,
        records,
        e: f64::NAN,
        diagnostics,
        snapshots,
    };
    log.e = log.recompute_e()?;
    Ok(log)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub const SUMMARY_HEADER: &str = "method,weather,n,seed,E";

pub fn summary_row(log: &RunLog) -> String {
    format!("{},{},{},{},{}", log.method, log.label, log.n, log.seed, fmt_g9(log.e))
}

/// Writes `rmse.csv`, `objective.csv`, `trajectories.csv`, `summary.csv`
/// and any map snapshots under `dir/maps/`.
pub fn write_run(dir: &Path, log: &RunLog) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = create(dir, "rmse.csv")?;
    writeln!(w, "t,rmse,in_window")?;
    for r in &log.records {
        writeln!(w, "{},{},{}", r.t, fmt_g9(r.rmse), u8::from(r.in_window))?;
    }
    w.flush()?;

    let mut w = create(dir, "objective.csv")?;
    writeln!(w, "t,H,mean_phi,max_phi")?;
    for r in &log.records {
        writeln!(w, "{},{},{},{}", r.t, fmt_g9(r.objective), fmt_g9(r.mean_phi), fmt_g9(r.max_phi))?;
    }
    w.flush()?;

    let mut w = create(dir, "trajectories.csv")?;
    writeln!(w, "t,agent,q1,q2,branch")?;
    for (i, p) in log.initial.iter().enumerate() {
        writeln!(w, "0,{i},{},{},none", fmt_g9(p[0]), fmt_g9(p[1]))?;
    }
    for r in &log.records {
        for (i, (p, b)) in r.positions.iter().zip(&r.branches).enumerate() {
            let b = b.map(|b| b.name()).unwrap_or("none");
            writeln!(w, "{},{i},{},{},{b}", r.t, fmt_g9(p[0]), fmt_g9(p[1]))?;
        }
    }
    w.flush()?;

    let mut w = create(dir, "summary.csv")?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    writeln!(w, "{}", summary_row(log))?;
    w.flush()?;

    let mut w = create(dir, "diagnostics.csv")?;
    writeln!(w, "max_dphi,max_d2phi")?;
    writeln!(w, "{},{}", fmt_g9(log.diagnostics.max_dphi), fmt_g9(log.diagnostics.max_d2phi))?;
    w.flush()?;

    if !log.snapshots.is_empty() {
        let maps = dir.join("maps");
        std::fs::create_dir_all(&maps)?;
        let grid = log.snapshots[0].dissimilarity.grid;
        for (name, pick) in [
            ("dissimilarity.csv", (|s: &Snapshot| &s.dissimilarity) as fn(&Snapshot) -> &GridMap),
            ("information.csv", |s: &Snapshot| &s.information),
            ("prediction.csv", |s: &Snapshot| &s.prediction),
        ] {
            let w = create(&maps, name)?;
            write_blocks(w, &grid, log.snapshots.iter().map(|s| (s.t, pick(s).values.as_slice())))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;
    use crate::grid::MissionGrid;

    fn small_cfg(method: Method) -> ScenarioConfig {
        let mut cfg = ConfigFile::default().scenario();
        cfg.field.nx = 24;
        cfg.field.ny = 18;
        cfg.field.steps = 60;
        cfg.sim.t_end = 30;
        cfg.sim.method = method;
        apply_reference_params(&mut cfg, method);
        cfg
    }

    #[test]
    fn fixed_agents_stay_put() {
        let log = run_scenario(&small_cfg(Method::Fixed)).unwrap();
        for r in &log.records {
            assert_eq!(r.positions, log.initial);
            assert!(r.branches.iter().all(|b| b.is_none()));
        }
    }

    #[test]
    fn baseline_importance_is_uniform() {
        let log = run_scenario(&small_cfg(Method::Baseline)).unwrap();
        assert!(log.records.iter().all(|r| r.mean_phi == 1.0 && r.max_phi == 1.0));
        assert_eq!(log.diagnostics, Diagnostics::default());
    }

    #[test]
    fn series_shape_and_e() {
        let cfg = small_cfg(Method::Proposed);
        let log = run_scenario(&cfg).unwrap();
        assert_eq!(log.records.len(), cfg.sim.t_end - cfg.sim.t0 + 1);
        assert_eq!(log.records.first().unwrap().t, cfg.sim.t0);
        let first_full = log.records.iter().find(|r| r.in_window).unwrap().t;
        assert_eq!(first_full, cfg.sim.window);
        let in_window: Vec<f64> = log.records.iter().filter(|r| r.in_window).map(|r| r.rmse).collect();
        let mean = in_window.iter().sum::<f64>() / in_window.len() as f64;
        assert!((mean - log.e).abs() < 1e-12);
        let grid = cfg.field.grid().unwrap();
        assert!(log.records.iter().flat_map(|r| &r.positions).all(|p| grid.contains(*p)));
    }

    #[test]
    fn constant_field_is_predicted_exactly() {
        let cfg = small_cfg(Method::Proposed);
        let grid: MissionGrid = cfg.field.grid().unwrap();
        let field = FieldSeries::constant(grid, 60, 0.4).unwrap();
        let log = run_scenario_with_field(&cfg, &field).unwrap();
        assert!(log.records.iter().all(|r| r.rmse < 1e-9));
    }

    #[test]
    fn unicycle_mode_runs() {
        let mut cfg = small_cfg(Method::Proposed);
        cfg.sim.dynamics = Dynamics::Unicycle;
        let log = run_scenario(&cfg).unwrap();
        assert!(log.e.is_finite());
    }

    #[test]
    fn field_too_short_is_rejected() {
        let cfg = small_cfg(Method::Baseline);
        let grid = cfg.field.grid().unwrap();
        let field = FieldSeries::constant(grid, 20, 0.4).unwrap();
        assert!(matches!(run_scenario_with_field(&cfg, &field), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn writes_artifacts() {
        let mut cfg = small_cfg(Method::Proposed);
        cfg.sim.snapshot_every = 10;
        let log = run_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &log).unwrap();
        let rmse = std::fs::read_to_string(dir.path().join("rmse.csv")).unwrap();
        assert_eq!(rmse.lines().count(), log.records.len() + 1);
        let traj = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
        assert_eq!(traj.lines().count(), 1 + cfg.agents.n * (log.records.len() + 1));
        let maps = std::fs::read_to_string(dir.path().join("maps/dissimilarity.csv")).unwrap();
        assert_eq!(maps.lines().filter(|l| l.starts_with("# t=")).count(), 3);
    }
}
