//! Method comparisons over sweeps of weather, team size and seeds.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::config::{FieldConfig, Method, ScenarioConfig};
use crate::error::{Error, Result};
use crate::field::{FieldSeries, Weather};
use crate::io::fmt_g9;
use crate::sim::{run_scenario_with_field, RunLog, SUMMARY_HEADER};

/// Cartesian sweep. Empty weather, team-size or seed lists keep the base
/// configuration's value; at least one method is required.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sweep {
    pub methods: Vec<Method>,
    pub weathers: Vec<Weather>,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Sweep {
    /// Builds one configuration per sweep point. `base_for` supplies the
    /// per-method starting configuration; a seed sets both the field and the
    /// simulation seed.
    pub fn expand<F>(&self, base_for: F) -> Result<Vec<ScenarioConfig>>
    where
        F: Fn(Method) -> Result<ScenarioConfig>,
    {
        if self.methods.is_empty() {
            return Err(Error::Config("the sweep lists no methods".into()));
        }
        let mut out = Vec::new();
        for &method in &self.methods {
            let base = base_for(method)?;
            let weathers = if self.weathers.is_empty() { vec![base.field.weather] } else { self.weathers.clone() };
            let ns = if self.ns.is_empty() { vec![base.agents.n] } else { self.ns.clone() };
            let seeds = if self.seeds.is_empty() { vec![base.sim.seed] } else { self.seeds.clone() };
            for &weather in &weathers {
                for &n in &ns {
                    for &seed in &seeds {
                        let mut cfg = base.clone();
                        cfg.sim.method = method;
                        cfg.field.weather = weather;
                        cfg.agents.n = n;
                        cfg.field.seed = seed;
                        cfg.sim.seed = seed;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub label: String,
    pub n: usize,
    pub seed: u64,
    pub e: f64,
}

impl From<&RunLog> for SummaryRow {
    fn from(log: &RunLog) -> Self {
        Self { method: log.method, label: log.label.clone(), n: log.n, seed: log.seed, e: log.e }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<SummaryRow>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.method, r.label, r.n, r.seed, fmt_g9(r.e))?;
        }
        Ok(())
    }

    /// Median `E` over seeds for every (weather, n, method) cell.
    pub fn medians(&self) -> BTreeMap<(String, usize, Method), f64> {
        let mut groups: BTreeMap<(String, usize, Method), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.label.clone(), r.n, r.method)).or_default().push(r.e);
        }
        groups.into_iter().map(|(k, mut v)| (k, median(&mut v))).collect()
    }

    pub fn median_of(&self, label: &str, n: usize, method: Method) -> Option<f64> {
        self.medians().get(&(label.to_string(), n, method)).copied()
    }

    /// Aligned text table: one row per (weather, n), one column per method.
    pub fn table(&self) -> String {
        let medians = self.medians();
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        let mut keys: Vec<(String, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.label.clone(), r.n);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut header = vec!["weather".to_string(), "n".to_string()];
        header.extend(methods.iter().map(|m| m.name().to_string()));
        let mut lines = vec![header];
        for (label, n) in keys {
            let mut line = vec![label.clone(), n.to_string()];
            for m in &methods {
                line.push(medians.get(&(label.clone(), n, *m)).map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into()));
            }
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for l in lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| if c < 2 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn field_key(f: &FieldConfig) -> Result<String> {
    // the offset selects a segment of the same series
    let f = FieldConfig { offset: 0, ..f.clone() };
    toml::to_string(&f).map_err(|e| Error::Config(e.to_string()))
}

/// Runs every configuration and tabulates `E`. All configurations must use
/// the same field source and evaluation horizon.
pub fn compare_methods(cfgs: &[ScenarioConfig]) -> Result<Comparison> {
    Ok(Comparison { rows: run_all(cfgs)?.iter().map(SummaryRow::from).collect() })
}

/// Like [`compare_methods`] but returns the full logs.
pub fn run_all(cfgs: &[ScenarioConfig]) -> Result<Vec<RunLog>> {
    let first = cfgs.first().ok_or_else(|| Error::Config("nothing to compare".into()))?;
    for c in cfgs {
        c.validate()?;
        let same_source = c.field.source == first.field.source && c.field.path == first.field.path;
        if !same_source {
            return Err(Error::Config("compared scenarios must share the field source".into()));
        }
        let horizon = |c: &ScenarioConfig| (c.sim.t0, c.sim.t_end, c.field.offset, c.field.steps);
        if horizon(c) != horizon(first) {
            return Err(Error::Config(format!(
                "mismatched horizons: (t0, t_end, offset, steps) = {:?} vs {:?}",
                horizon(c),
                horizon(first)
            )));
        }
    }
    let mut keys = Vec::with_capacity(cfgs.len());
    let mut unique: BTreeMap<String, usize> = BTreeMap::new();
    let mut to_load: Vec<&FieldConfig> = Vec::new();
    for c in cfgs {
        let key = field_key(&c.field)?;
        let next = unique.len();
        let idx = *unique.entry(key).or_insert_with(|| {
            to_load.push(&c.field);
            next
        });
        keys.push(idx);
    }
    let fields: Vec<FieldSeries> = to_load.par_iter().map(|f| f.load()).collect::<Result<_>>()?;
    cfgs.par_iter().zip(keys.par_iter()).map(|(c, &k)| run_scenario_with_field(c, &fields[k])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    fn tiny() -> ScenarioConfig {
        let mut cfg = ConfigFile::default().scenario();
        cfg.field.nx = 16;
        cfg.field.ny = 12;
        cfg.field.steps = 30;
        cfg.sim.t_end = 20;
        cfg
    }

    #[test]
    fn sweep_cardinality() {
        let sweep = Sweep {
            methods: vec![Method::Baseline, Method::Proposed],
            weathers: Weather::ALL.to_vec(),
            ns: vec![4],
            seeds: vec![1, 2, 3],
        };
        assert_eq!(sweep.expand(|_| Ok(tiny())).unwrap().len(), 24);
        assert!(Sweep::default().expand(|_| Ok(tiny())).is_err());
    }

    #[test]
    fn seeds_drive_field_and_sim() {
        let sweep = Sweep { methods: vec![Method::Fixed], seeds: vec![9], ..Default::default() };
        let cfgs = sweep.expand(|_| Ok(tiny())).unwrap();
        assert_eq!((cfgs[0].field.seed, cfgs[0].sim.seed), (9, 9));
    }

    #[test]
    fn single_config_gives_one_row() {
        let cmp = compare_methods(&[tiny()]).unwrap();
        assert_eq!(cmp.rows.len(), 1);
        let log = crate::sim::run_scenario(&tiny()).unwrap();
        assert_eq!(cmp.rows[0].e, log.e);
        assert_eq!(cmp.table().lines().count(), 2);
    }

    #[test]
    fn mismatched_horizons_are_rejected() {
        let mut other = tiny();
        other.sim.t_end = 15;
        assert!(compare_methods(&[tiny(), other]).is_err());
        assert!(compare_methods(&[]).is_err());
    }

    #[test]
    fn medians_and_table() {
        let rows = [0.3, 0.1, 0.2, 0.4]
            .iter()
            .enumerate()
            .map(|(i, e)| SummaryRow {
                method: if i < 3 { Method::Baseline } else { Method::Proposed },
                label: "cloudy".into(),
                n: 4,
                seed: i as u64,
                e: *e,
            })
            .collect();
        let cmp = Comparison { rows };
        assert_eq!(cmp.median_of("cloudy", 4, Method::Baseline), Some(0.2));
        assert_eq!(cmp.median_of("cloudy", 4, Method::Proposed), Some(0.4));
        let table = cmp.table();
        assert!(table.starts_with("weather  n  baseline  proposed"), "{table}");
        assert!(table.contains("0.2000") && table.contains("0.4000"));
        assert_eq!(median(&mut [1.0, 3.0]), 2.0);
    }
}
