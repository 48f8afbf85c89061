//! Aggregation of per-seed result tables.
//!
//! Rows are grouped on every column except `seed` and the metric columns;
//! accuracy, `delta_mu` and `t` get mean and sample standard deviation,
//! p-values a geometric mean and its power of ten, verdicts a stolen
//! fraction.

use crate::error::{Error, Result};
use crate::stats::{mean, sample_variance};

const METRICS: [&str; 3] = ["accuracy", "delta_mu", "t"];

pub const OUT_METRICS: &str = "n,accuracy_mean,accuracy_std,delta_mu_mean,delta_mu_std,t_mean,t_std,p_geomean,p_log10,stolen_fraction";

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub key: Vec<String>,
    pub n: usize,
    /// `(mean, std)` per entry of `METRICS`.
    pub stats: Vec<(f64, f64)>,
    pub p_geomean: f64,
    pub p_log10: i32,
    pub stolen_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub key_columns: Vec<String>,
    pub groups: Vec<Group>,
}

fn std_of(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        0.0
    } else {
        sample_variance(xs).sqrt()
    }
}

/// Geometric mean of p-values; zeros are clamped to the smallest positive
/// double so a single underflow does not swallow the group.
pub fn geometric_mean_p(ps: &[f64]) -> f64 {
    let logs: Vec<f64> = ps.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
    mean(&logs).exp()
}

pub fn summarize(tables: &[&str]) -> Result<Summary> {
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (ti, t) in tables.iter().enumerate() {
        let mut lines = t.lines().filter(|l| !l.trim().is_empty());
        let h: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format(format!("table {ti} is empty")))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        match &header {
            None => header = Some(h.clone()),
            Some(prev) if *prev != h => {
                return Err(Error::Format(format!(
                    "header mismatch: `{}` vs `{}`",
                    prev.join(","),
                    h.join(",")
                )))
            }
            _ => {}
        }
        for (li, l) in lines.enumerate() {
            let r: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if r.len() != h.len() {
                return Err(Error::Format(format!("table {ti} row {}: {} fields, expected {}", li + 1, r.len(), h.len())));
            }
            rows.push(r);
        }
    }
    let header = header.ok_or_else(|| Error::Format("no tables given".into()))?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    };
    let metric_idx: Vec<usize> = METRICS.iter().map(|m| col(m)).collect::<Result<_>>()?;
    let p_idx = col("p_value")?;
    let v_idx = col("verdict")?;
    let seed_idx = col("seed")?;
    let skip: Vec<usize> = metric_idx.iter().copied().chain([p_idx, v_idx, seed_idx]).collect();
    let key_idx: Vec<usize> = (0..header.len()).filter(|i| !skip.contains(i)).collect();
    if rows.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }

    let mut order: Vec<Vec<String>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (ri, r) in rows.iter().enumerate() {
        let key: Vec<String> = key_idx.iter().map(|&i| r[i].clone()).collect();
        match order.iter().position(|k| *k == key) {
            Some(g) => members[g].push(ri),
            None => {
                order.push(key);
                members.push(vec![ri]);
            }
        }
    }
    let num = |r: &Vec<String>, i: usize| -> Result<f64> {
        r[i].parse::<f64>()
            .map_err(|e| Error::Format(format!("column `{}`: `{}`: {e}", header[i], r[i])))
    };
    let mut groups = Vec::with_capacity(order.len());
    for (key, idx) in order.into_iter().zip(members) {
        let mut stats = Vec::with_capacity(METRICS.len());
        for &mi in &metric_idx {
            let xs: Vec<f64> = idx.iter().map(|&r| num(&rows[r], mi)).collect::<Result<_>>()?;
            stats.push((mean(&xs), std_of(&xs)));
        }
        let ps: Vec<f64> = idx.iter().map(|&r| num(&rows[r], p_idx)).collect::<Result<_>>()?;
        let g = geometric_mean_p(&ps);
        let stolen = idx.iter().filter(|&&r| rows[r][v_idx] == "stolen").count();
        groups.push(Group {
            key,
            n: idx.len(),
            stats,
            p_geomean: g,
            p_log10: g.log10().floor() as i32,
            stolen_fraction: stolen as f64 / idx.len() as f64,
        });
    }
    Ok(Summary {
        key_columns: key_idx.iter().map(|&i| header[i].clone()).collect(),
        groups,
    })
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in &self.key_columns {
            out.push_str(k);
            out.push(',');
        }
        out.push_str(OUT_METRICS);
        out.push('\n');
        for g in &self.groups {
            for k in &g.key {
                out.push_str(k);
                out.push(',');
            }
            out.push_str(&g.n.to_string());
            for (m, s) in &g.stats {
                out.push_str(&format!(",{m},{s}"));
            }
            out.push_str(&format!(",{},{},{}\n", g.p_geomean, g.p_log10, g.stolen_fraction));
        }
        out
    }
}
