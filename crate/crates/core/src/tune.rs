//! Derivative-free parameter tuning.
//!
//! Nelder–Mead on a box, run in a transformed space: strictly positive
//! parameters are searched in log coordinates, the decay rate linearly.
//! Points leaving the box are projected back onto it before evaluation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ScenarioConfig, TuneConfig, TuneParam};
use crate::error::{Error, Result};
use crate::field::FieldSeries;
use crate::io::fmt_g9;
use crate::sim::run_scenario_with_field;

/// One objective evaluation, in natural parameter units.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub eval: usize,
    pub restart: usize,
    pub params: Vec<f64>,
    pub value: f64,
    /// Best value seen so far, including this evaluation.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub free: Vec<TuneParam>,
    pub best: Vec<f64>,
    pub best_value: f64,
    pub trace: Vec<TraceEntry>,
}

impl TuneResult {
    pub fn best_pairs(&self) -> Vec<(TuneParam, f64)> {
        self.free.iter().copied().zip(self.best.iter().copied()).collect()
    }

    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<&str> = self.free.iter().map(|p| p.name()).collect();
        writeln!(w, "eval,restart,{},E,best", names.join(","))?;
        for e in &self.trace {
            let ps: Vec<String> = e.params.iter().map(|v| fmt_g9(*v)).collect();
            writeln!(w, "{},{},{},{},{}", e.eval, e.restart, ps.join(","), fmt_g9(e.value), fmt_g9(e.best))?;
        }
        Ok(())
    }
}

/// Box-constrained Nelder–Mead options.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMead {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Initial simplex edge as a fraction of each box side.
    pub step: f64,
    /// Stop when the simplex values and vertices both collapse below this.
    pub tol: f64,
}

impl NelderMead {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, budget: usize) -> Self {
        Self { lower, upper, budget, step: 0.25, tol: 1e-10 }
    }

    fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Minimizes `f` from `x0`. Every evaluated point is returned in order
    /// along with its value; NaN values are treated as +∞.
    pub fn minimize<F>(&self, f: F, x0: &[f64]) -> Vec<(Vec<f64>, f64)>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let dim = x0.len();
        let mut log: Vec<(Vec<f64>, f64)> = Vec::new();
        let clean = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        // evaluates a batch in parallel, truncated to the remaining budget
        let eval_batch = |pts: Vec<Vec<f64>>, log: &mut Vec<(Vec<f64>, f64)>| -> Option<Vec<f64>> {
            let room = self.budget.saturating_sub(log.len());
            let complete = pts.len() <= room;
            let vals: Vec<f64> = pts[..pts.len().min(room)].par_iter().map(|p| clean(f(p))).collect();
            for (p, v) in pts.into_iter().zip(&vals) {
                log.push((p, *v));
            }
            complete.then_some(vals)
        };

        let mut start = x0.to_vec();
        self.project(&mut start);
        let mut pts = vec![start.clone()];
        for i in 0..dim {
            let mut p = start.clone();
            let h = self.step * (self.upper[i] - self.lower[i]);
            p[i] = if p[i] + h <= self.upper[i] { p[i] + h } else { p[i] - h };
            pts.push(p);
        }
        let Some(vals) = eval_batch(pts.clone(), &mut log) else { return log };
        let mut simplex: Vec<(Vec<f64>, f64)> = pts.into_iter().zip(vals).collect();

        let eval_one = |p: Vec<f64>, log: &mut Vec<(Vec<f64>, f64)>| -> Option<f64> {
            if log.len() >= self.budget {
                return None;
            }
            let v = clean(f(&p));
            log.push((p, v));
            Some(v)
        };

        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[dim].1 - simplex[0].1;
            let diameter = simplex
                .iter()
                .skip(1)
                .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (spread.is_finite() && spread.abs() <= self.tol && diameter <= self.tol.sqrt()) || diameter == 0.0 {
                break;
            }
            let centroid: Vec<f64> =
                (0..dim).map(|j| simplex[..dim].iter().map(|(p, _)| p[j]).sum::<f64>() / dim as f64).collect();
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> =
                    (0..dim).map(|j| centroid[j] + t * (simplex[dim].0[j] - centroid[j])).collect();
                self.project(&mut p);
                p
            };
            let xr = along(-1.0);
            let Some(fr) = eval_one(xr.clone(), &mut log) else { break };
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let Some(fe) = eval_one(xe.clone(), &mut log) else {
                    simplex[dim] = (xr, fr);
                    break;
                };
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = along(-0.5);
                let Some(fc) = eval_one(xc.clone(), &mut log) else { break };
                (xc, fc)
            } else {
                let xc = along(0.5);
                let Some(fc) = eval_one(xc.clone(), &mut log) else { break };
                (xc, fc)
            };
            if fc < fr.min(simplex[dim].1) {
                simplex[dim] = (xc, fc);
                continue;
            }
            // shrink toward the best vertex
            let best = simplex[0].0.clone();
            let shrunk: Vec<Vec<f64>> = simplex[1..]
                .iter()
                .map(|(p, _)| {
                    let mut q: Vec<f64> = p.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    self.project(&mut q);
                    q
                })
                .collect();
            let Some(vals) = eval_batch(shrunk.clone(), &mut log) else { break };
            for (slot, (p, v)) in simplex[1..].iter_mut().zip(shrunk.into_iter().zip(vals)) {
                *slot = (p, v);
            }
        }
        log
    }
}

/// Everything [`tune`] needs: the scenario to tune and the search setup.
#[derive(Debug, Clone)]
pub struct TuneSpec {
    pub base: ScenarioConfig,
    pub tune: TuneConfig,
}

impl TuneSpec {
    /// Bounds of the free parameters in natural units, in `free` order.
    pub fn bounds(&self) -> Result<Vec<[f64; 2]>> {
        let t = &self.tune;
        if t.free.is_empty() {
            return Err(Error::Config("tune.free lists no parameters".into()));
        }
        for (i, p) in t.free.iter().enumerate() {
            if t.free[..i].contains(p) {
                return Err(Error::Config(format!("tune.free lists `{}` twice", p.name())));
            }
        }
        let dim = t.free.len();
        if t.budget < 10 * (dim + 1) {
            return Err(Error::Config(format!(
                "tune.budget ({}) must be at least 10 * (free parameters + 1) = {}",
                t.budget,
                10 * (dim + 1)
            )));
        }
        t.free
            .iter()
            .map(|p| {
                let [lo, hi] = *t
                    .bounds
                    .get(p)
                    .ok_or_else(|| Error::Config(format!("tune.bounds has no entry for free parameter `{}`", p.name())))?;
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Config(format!("tune.bounds.{} must be finite with lower < upper", p.name())));
                }
                match p {
                    TuneParam::Delta if hi > 0.0 => {
                        Err(Error::Config("tune.bounds.delta upper bound must be <= 0".into()))
                    }
                    TuneParam::Delta => Ok([lo, hi]),
                    _ if lo <= 0.0 => Err(Error::Config(format!("tune.bounds.{} lower bound must be > 0", p.name()))),
                    _ => Ok([lo, hi]),
                }
            })
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.tune.seeds.is_empty() {
            vec![self.base.sim.seed]
        } else {
            self.tune.seeds.clone()
        }
    }

    /// The base scenario moved onto the training segment.
    pub fn training_config(&self, seed: u64) -> ScenarioConfig {
        let mut cfg = self.base.clone();
        cfg.field.offset = self.tune.train_offset;
        cfg.field.seed = seed;
        cfg.sim.seed = seed;
        cfg
    }

    pub fn with_params(&self, cfg: &ScenarioConfig, params: &[f64]) -> ScenarioConfig {
        let mut cfg = cfg.clone();
        for (p, v) in self.tune.free.iter().zip(params) {
            p.set(&mut cfg, *v);
        }
        cfg
    }
}

fn to_search(p: TuneParam, x: f64) -> f64 {
    if p == TuneParam::Delta {
        x
    } else {
        x.ln()
    }
}

fn from_search(p: TuneParam, y: f64) -> f64 {
    if p == TuneParam::Delta {
        y
    } else {
        y.exp()
    }
}

/// Minimizes the mean `E` over the training seeds.
pub fn tune(spec: &TuneSpec) -> Result<TuneResult> {
    let bounds = spec.bounds()?;
    spec.base.validate()?;
    let seeds = spec.seeds();
    let fields: Vec<(ScenarioConfig, FieldSeries)> = seeds
        .iter()
        .map(|&s| {
            let cfg = spec.training_config(s);
            cfg.validate()?;
            let field = cfg.field.load()?;
            Ok((cfg, field))
        })
        .collect::<Result<_>>()?;
    let objective = |x: &[f64]| -> f64 {
        let mut sum = 0.0;
        for (cfg, field) in &fields {
            match run_scenario_with_field(&spec.with_params(cfg, x), field) {
                Ok(log) => sum += log.e,
                Err(e) => {
                    log::warn!("tune: evaluation at {x:?} failed: {e}");
                    return f64::INFINITY;
                }
            }
        }
        sum / fields.len() as f64
    };
    Ok(tune_with(spec, &bounds, objective))
}

/// Runs the restarts of [`tune`] against an arbitrary objective in natural
/// units.
pub fn tune_with<F>(spec: &TuneSpec, bounds: &[[f64; 2]], objective: F) -> TuneResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let free = spec.tune.free.clone();
    let dim = free.len();
    let lower: Vec<f64> = free.iter().zip(bounds).map(|(p, b)| to_search(*p, b[0])).collect();
    let upper: Vec<f64> = free.iter().zip(bounds).map(|(p, b)| to_search(*p, b[1])).collect();
    let natural = |y: &[f64]| -> Vec<f64> {
        free.iter().zip(y).zip(bounds).map(|((p, v), b)| from_search(*p, *v).clamp(b[0], b[1])).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.tune.seed);
    let runs = spec.tune.restarts + 1;
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(spec.tune.budget);
    let mut best = (natural(&lower), f64::INFINITY);
    for restart in 0..runs {
        let remaining = spec.tune.budget - trace.len();
        let share = if restart + 1 == runs { remaining } else { spec.tune.budget / runs };
        if share == 0 {
            break;
        }
        let x0: Vec<f64> = if restart == 0 {
            free.iter().map(|p| to_search(*p, p.get(&spec.base))).collect::<Vec<_>>()
        } else {
            (0..dim).map(|i| rng.gen_range(lower[i]..=upper[i])).collect()
        };
        let nm = NelderMead::new(lower.clone(), upper.clone(), share);
        let evals = nm.minimize(|y| objective(&natural(y)), &x0);
        for (y, v) in evals {
            let params = natural(&y);
            if v.is_infinite() {
                log::warn!("tune: objective at {params:?} is not finite");
            }
            if v < best.1 {
                best = (params.clone(), v);
            }
            trace.push(TraceEntry { eval: trace.len() + 1, restart, params, value: v, best: best.1 });
        }
    }
    TuneResult { free, best: best.0, best_value: best.1, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    fn spec(free: Vec<TuneParam>, budget: usize) -> TuneSpec {
        let file = ConfigFile::default();
        TuneSpec { base: file.scenario(), tune: TuneConfig { free, budget, ..file.tune } }
    }

    #[test]
    fn recovers_a_quadratic_minimizer() {
        let s = spec(vec![TuneParam::Sigma], 60);
        let bounds = s.bounds().unwrap();
        let res = tune_with(&s, &bounds, |x| (x[0] - 0.37).powi(2) + 0.1);
        assert!((res.best[0] - 0.37).abs() < 1e-3, "{:?}", res.best);
        assert!(res.trace.len() <= 60);
    }

    #[test]
    fn rosenbrock_in_the_box() {
        let nm = NelderMead::new(vec![-2.0, -2.0], vec![2.0, 2.0], 2000);
        let log = nm.minimize(|x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2), &[-1.5, 1.5]);
        let best = log.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!(best.1 < 1e-6, "{best:?}");
    }

    #[test]
    fn constrained_minimum_sits_on_the_boundary() {
        let nm = NelderMead::new(vec![0.0, 0.0], vec![1.0, 1.0], 400);
        let log = nm.minimize(|x| (x[0] - 3.0).powi(2) + (x[1] - 0.5).powi(2), &[0.2, 0.2]);
        assert!(log.iter().all(|(x, _)| x.iter().all(|v| (0.0..=1.0).contains(v))));
        let best = log.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((best.0[0] - 1.0).abs() < 1e-6 && (best.0[1] - 0.5).abs() < 1e-3, "{best:?}");
    }

    #[test]
    fn nan_counts_as_infinite() {
        let s = spec(vec![TuneParam::Tau], 40);
        let bounds = s.bounds().unwrap();
        let res = tune_with(&s, &bounds, |x| if x[0] > 1.0 { f64::NAN } else { (x[0] - 0.5).powi(2) });
        assert!(res.trace.iter().all(|e| !e.value.is_nan()));
        assert!((res.best[0] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn trace_is_monotone_and_reproducible() {
        let mut s = spec(vec![TuneParam::Sigma, TuneParam::Delta], 90);
        s.tune.restarts = 2;
        s.tune.seed = 7;
        let bounds = s.bounds().unwrap();
        let f = |x: &[f64]| (x[0].ln() + 1.0).powi(2) + (x[1] + 0.3).powi(2) + (5.0 * x[0]).sin() * 0.01;
        let a = tune_with(&s, &bounds, f);
        let b = tune_with(&s, &bounds, f);
        assert_eq!(a, b);
        assert!(a.trace.len() <= 90);
        assert!(a.trace.windows(2).all(|w| w[1].best <= w[0].best));
        assert!(a.trace.iter().any(|e| e.restart == 2));
        for e in &a.trace {
            for (v, b) in e.params.iter().zip(&bounds) {
                assert!(*v >= b[0] && *v <= b[1]);
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(spec(vec![TuneParam::Beta, TuneParam::Sigma, TuneParam::Tau], 39).bounds().is_err());
        assert!(spec(vec![TuneParam::Beta, TuneParam::Sigma, TuneParam::Tau], 40).bounds().is_ok());
        assert!(spec(vec![], 40).bounds().is_err());
        assert!(spec(vec![TuneParam::K, TuneParam::K], 40).bounds().is_err());
        let mut s = spec(vec![TuneParam::K], 40);
        s.tune.bounds.remove(&TuneParam::K);
        assert!(matches!(s.bounds(), Err(Error::Config(m)) if m.contains("`k`")));
        let mut s = spec(vec![TuneParam::Delta], 40);
        s.tune.bounds.insert(TuneParam::Delta, [-1.0, 0.5]);
        assert!(s.bounds().is_err());
        let mut s = spec(vec![TuneParam::Beta], 40);
        s.tune.bounds.insert(TuneParam::Beta, [0.0, 1.0]);
        assert!(s.bounds().is_err());
    }
}
