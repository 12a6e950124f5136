//! Persistent coverage with information decay.
//!
//! Each agent senses with a quartic footprint of radius `r`; the information
//! map accumulates sensing and decays at rate `δ`. Agents follow the gradient
//! of the importance-weighted coverage penalty and, when their disk is fully
//! satisfied, are pulled toward a target point inside it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridMap, MissionGrid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FallbackTarget {
    /// Cell of highest importance inside the sensing disk.
    #[default]
    Argmax,
    /// Uniformly random cell inside the sensing disk.
    Random,
    /// Centroid of the sensing disk cells.
    FixedCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageParams {
    /// Peak of the measurement function.
    pub c: f64,
    /// Sensing radius (m).
    pub r: f64,
    /// Information decay rate per step, `<= 0`.
    pub delta: f64,
    /// Gain of the penalty-gradient controller.
    pub k: f64,
    /// Gain of the fallback attraction.
    pub k_hat: f64,
    /// Uniform reference information level.
    pub i_ref: f64,
    pub fallback: FallbackTarget,
    /// Euler substeps per planning step for the information dynamics.
    pub substeps: usize,
}

impl Default for CoverageParams {
    fn default() -> Self {
        Self {
            c: 0.3,
            r: 0.5,
            delta: -0.209257,
            // reference gain for a plain cell sum, rescaled to an area integral
            k: 0.0578 / MissionGrid::plant().cell_area(),
            k_hat: 0.399603,
            i_ref: 1.0,
            fallback: FallbackTarget::Argmax,
            substeps: 1,
        }
    }
}

impl CoverageParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("coverage.{what} invalid: {v}")));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c must be > 0;", self.c);
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad("r must be > 0;", self.r);
        }
        if !(self.delta <= 0.0 && self.delta.is_finite()) {
            return bad("delta must be <= 0;", self.delta);
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad("k must be > 0;", self.k);
        }
        if !(self.k_hat > 0.0 && self.k_hat.is_finite()) {
            return bad("k_hat must be > 0;", self.k_hat);
        }
        if !(self.i_ref > 0.0 && self.i_ref.is_finite()) {
            return bad("i_ref must be > 0;", self.i_ref);
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("coverage.substeps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub p: Point,
    /// Heading in (-π, π]; only the unicycle dynamics use it.
    pub theta: f64,
}

impl AgentState {
    pub fn new(id: usize, p: Point) -> Self {
        Self { id, p, theta: 0.0 }
    }
}

/// Information map with its reference level.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMap {
    pub map: GridMap,
    /// Per-cell reference level.
    pub reference: Vec<f64>,
}

impl InformationMap {
    /// Zero information with a uniform reference level.
    pub fn zeros(grid: MissionGrid, i_ref: f64) -> Self {
        Self { map: GridMap::filled(grid, 0.0), reference: vec![i_ref; grid.len()] }
    }

    pub fn with_reference(map: GridMap, reference: Vec<f64>) -> Result<Self> {
        if reference.len() != map.grid.len() {
            return Err(Error::ShapeMismatch("reference map does not match grid".into()));
        }
        Ok(Self { map, reference })
    }

    pub fn grid(&self) -> &MissionGrid {
        &self.map.grid
    }

    #[inline]
    pub fn error(&self, idx: usize) -> f64 {
        self.reference[idx] - self.map.values[idx]
    }
}

#[inline]
pub fn measurement(s: f64, cp: &CoverageParams) -> f64 {
    let r2 = cp.r * cp.r;
    if s <= r2 {
        cp.c / (r2 * r2) * (s - r2) * (s - r2)
    } else {
        0.0
    }
}

/// Derivative of [`measurement`] with respect to the squared distance.
#[inline]
pub fn measurement_deriv(s: f64, cp: &CoverageParams) -> f64 {
    let r2 = cp.r * cp.r;
    if s <= r2 {
        2.0 * cp.c / (r2 * r2) * (s - r2)
    } else {
        0.0
    }
}

pub fn measurement_map(agents: &[AgentState], q: Point, cp: &CoverageParams) -> f64 {
    agents
        .iter()
        .map(|a| measurement((q[0] - a.p[0]).powi(2) + (q[1] - a.p[1]).powi(2), cp))
        .sum()
}

/// Explicit Euler update of the information dynamics, floored at zero.
pub fn info_step(info: &InformationMap, agents: &[AgentState], cp: &CoverageParams, dt: f64) -> Result<InformationMap> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let grid = *info.grid();
    let mut gain = vec![0.0; grid.len()];
    for a in agents {
        grid.for_each_within(a.p, cp.r, |idx, _, s| gain[idx] += measurement(s, cp));
    }
    let values = info
        .map
        .values
        .iter()
        .zip(&gain)
        .map(|(&i, &m)| (i + dt * (cp.delta * i + m)).max(0.0))
        .collect();
    Ok(InformationMap { map: GridMap { grid, values }, reference: info.reference.clone() })
}

/// Advances one planning step in `cp.substeps` equal Euler substeps.
pub fn info_advance(info: &InformationMap, agents: &[AgentState], cp: &CoverageParams) -> Result<InformationMap> {
    let dt = 1.0 / cp.substeps as f64;
    let mut out = info_step(info, agents, cp, dt)?;
    for _ in 1..cp.substeps {
        out = info_step(&out, agents, cp, dt)?;
    }
    Ok(out)
}

#[inline]
pub fn penalty(e: f64) -> f64 {
    let v = e.max(0.0);
    v * v
}

#[inline]
pub fn penalty_deriv(e: f64) -> f64 {
    (2.0 * e).max(0.0)
}

/// Importance-weighted coverage penalty summed over the grid.
pub fn objective_h(info: &InformationMap, importance: &GridMap) -> Result<f64> {
    importance.check_same_grid(info.grid())?;
    let area = info.grid().cell_area();
    Ok((0..info.grid().len()).map(|idx| penalty(info.error(idx)) * importance.values[idx]).sum::<f64>() * area)
}

/// Penalty-gradient control input.
pub fn control_primary(agent: &AgentState, info: &InformationMap, importance: &GridMap, cp: &CoverageParams) -> Point {
    let grid = info.grid();
    let mut acc = [0.0, 0.0];
    grid.for_each_within(agent.p, cp.r, |idx, q, s| {
        let w = penalty_deriv(info.error(idx)) * measurement_deriv(s, cp) * importance.values[idx];
        acc[0] += w * (q[0] - agent.p[0]);
        acc[1] += w * (q[1] - agent.p[1]);
    });
    let scale = -cp.k * grid.cell_area();
    [scale * acc[0], scale * acc[1]]
}

/// Whether some cell of the sensing disk has a positive penalty slope.
pub fn has_deficit(agent: &AgentState, info: &InformationMap, cp: &CoverageParams) -> bool {
    let mut any = false;
    info.grid().for_each_within(agent.p, cp.r, |idx, _, _| {
        any |= penalty_deriv(info.error(idx)) != 0.0;
    });
    any
}

/// Target point for the fallback controller.
pub fn fallback_target<R: Rng>(agent: &AgentState, importance: &GridMap, cp: &CoverageParams, rng: &mut R) -> Point {
    let grid = &importance.grid;
    let mut cells: Vec<(usize, Point, f64)> = Vec::new();
    grid.for_each_within(agent.p, cp.r, |idx, q, s| cells.push((idx, q, s)));
    if cells.is_empty() {
        return agent.p;
    }
    let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let v = importance.values[c.0];
        (lo.min(v), hi.max(v))
    });
    let uniform = hi - lo <= 1e-12 * hi.abs().max(1.0);
    match cp.fallback {
        FallbackTarget::Random => cells[rng.gen_range(0..cells.len())].1,
        FallbackTarget::Argmax if uniform => cells[rng.gen_range(0..cells.len())].1,
        FallbackTarget::Argmax => {
            // highest importance, then farthest, then lowest index
            let best = cells
                .iter()
                .max_by(|a, b| {
                    importance.values[a.0]
                        .total_cmp(&importance.values[b.0])
                        .then(a.2.total_cmp(&b.2))
                        .then(b.0.cmp(&a.0))
                })
                .unwrap();
            best.1
        }
        FallbackTarget::FixedCenter => {
            let n = cells.len() as f64;
            let sx: f64 = cells.iter().map(|c| c.1[0]).sum();
            let sy: f64 = cells.iter().map(|c| c.1[1]).sum();
            [sx / n, sy / n]
        }
    }
}

pub fn control_fallback<R: Rng>(agent: &AgentState, importance: &GridMap, cp: &CoverageParams, rng: &mut R) -> Point {
    let target = fallback_target(agent, importance, cp, rng);
    attract(agent.p, target, cp.k_hat)
}

#[inline]
pub fn attract(p: Point, target: Point, gain: f64) -> Point {
    [-gain * (p[0] - target[0]), -gain * (p[1] - target[1])]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Primary,
    Fallback,
}

impl Branch {
    pub fn name(&self) -> &'static str {
        match self {
            Branch::Primary => "primary",
            Branch::Fallback => "fallback",
        }
    }
}

/// Switched law: the gradient controller while any disk cell is below the
/// reference, otherwise the fallback attraction.
pub fn control_switched<R: Rng>(
    agent: &AgentState,
    info: &InformationMap,
    importance: &GridMap,
    cp: &CoverageParams,
    rng: &mut R,
) -> (Point, Branch) {
    if has_deficit(agent, info, cp) {
        (control_primary(agent, info, importance, cp), Branch::Primary)
    } else {
        (control_fallback(agent, importance, cp, rng), Branch::Fallback)
    }
}

/// Inverse-distance repulsion from neighbors closer than `safety_radius`.
/// The result is capped at `cap`; coincident neighbors push in a random
/// direction at the cap.
pub fn repulsion<R: Rng>(
    agent: &AgentState,
    others: &[AgentState],
    safety_radius: f64,
    gain: f64,
    cap: f64,
    rng: &mut R,
) -> Point {
    let mut u = [0.0, 0.0];
    for o in others.iter().filter(|o| o.id != agent.id) {
        let d = [agent.p[0] - o.p[0], agent.p[1] - o.p[1]];
        let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if dist >= safety_radius {
            continue;
        }
        if dist == 0.0 {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            return [cap * a.cos(), cap * a.sin()];
        }
        let mag = gain * (1.0 / dist - 1.0 / safety_radius);
        u[0] += mag * d[0] / dist;
        u[1] += mag * d[1] / dist;
    }
    let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
    if norm > cap {
        u = [u[0] * cap / norm, u[1] * cap / norm];
    }
    u
}

/// Lloyd iteration on grid cells with uniform density.
pub fn lloyd_placement(grid: &MissionGrid, n: usize, seed: u64) -> Result<Vec<Point>> {
    use rand::SeedableRng;
    if n == 0 {
        return Err(Error::InvalidParameter("lloyd placement needs n >= 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = grid.q1_max - grid.q1_min;
    let h = grid.q2_max - grid.q2_min;
    let cols = ((n as f64 * w / h).sqrt().round() as usize).clamp(1, n);
    let rows = n.div_ceil(cols);
    let mut sites: Vec<Point> = (0..n)
        .map(|k| {
            let (ci, ri) = (k % cols, k / cols);
            let jitter = [rng.gen_range(-0.01..0.01) * w / cols as f64, rng.gen_range(-0.01..0.01) * h / rows as f64];
            [
                grid.q1_min + (ci as f64 + 0.5) * w / cols as f64 + jitter[0],
                grid.q2_min + (ri as f64 + 0.5) * h / rows as f64 + jitter[1],
            ]
        })
        .collect();
    let centers = grid.centers();
    for _ in 0..500 {
        let next = lloyd_update(&centers, &sites);
        let moved = sites
            .iter()
            .zip(&next)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        sites = next;
        if moved < 1e-6 {
            break;
        }
    }
    Ok(sites)
}

/// One Lloyd step: every site moves to the centroid of the cells nearest to
/// it (ties to the lower site index). Sites that own no cell stay put.
pub fn lloyd_update(centers: &[Point], sites: &[Point]) -> Vec<Point> {
    let mut sum = vec![[0.0, 0.0]; sites.len()];
    let mut count = vec![0usize; sites.len()];
    for c in centers {
        let owner = nearest_site(c, sites);
        sum[owner][0] += c[0];
        sum[owner][1] += c[1];
        count[owner] += 1;
    }
    sites
        .iter()
        .enumerate()
        .map(|(k, s)| if count[k] == 0 { *s } else { [sum[k][0] / count[k] as f64, sum[k][1] / count[k] as f64] })
        .collect()
}

fn nearest_site(c: &Point, sites: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, s) in sites.iter().enumerate() {
        let d = (c[0] - s[0]).powi(2) + (c[1] - s[1]).powi(2);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}
