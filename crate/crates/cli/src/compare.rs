//! Trajectory comparison between two run directories.

use std::path::Path;

use clap::ValueEnum;
use serde_json::Value;

use crate::error::CliError;
use crate::output::{num, read_numeric, write_atomic, Table};

/// Resampling points over the common time window.
pub const SAMPLES: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Sup,
    L2,
}

impl Metric {
    fn id(self) -> &'static str {
        match self {
            Metric::Sup => "sup",
            Metric::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub metric: Metric,
    /// Distance per state component, then the combined distance.
    pub components: Vec<(String, f64)>,
    pub distance: f64,
    pub window: (f64, f64),
}

fn run_meta(dir: &Path) -> Result<(String, String), CliError> {
    let path = dir.join("run.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let model = v["model"].as_str().ok_or_else(|| CliError::Validation(format!("{} has no model", path.display())))?;
    let traj = v["trajectory"]
        .as_str()
        .ok_or_else(|| CliError::IncompatibleRuns(format!("{} has no trajectory table", dir.display())))?;
    Ok((model.to_string(), traj.to_string()))
}

/// Piecewise-linear trajectory; at repeated times the later (post-reset)
/// row wins.
struct Samples {
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
}

impl Samples {
    fn at(&self, s: f64) -> Vec<f64> {
        let k = self.t.partition_point(|&t| t <= s);
        if k == 0 {
            return self.x[0].clone();
        }
        if k == self.t.len() {
            return self.x[k - 1].clone();
        }
        let (t0, t1) = (self.t[k - 1], self.t[k]);
        let w = if t1 > t0 { (s - t0) / (t1 - t0) } else { 0.0 };
        self.x[k - 1].iter().zip(&self.x[k]).map(|(a, b)| a + w * (b - a)).collect()
    }
}

fn load(dir: &Path, file: &str) -> Result<(Vec<String>, Samples), CliError> {
    let (header, rows) = read_numeric(&dir.join(file))?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(CliError::Validation(format!("{file} does not start with a time column")));
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{} has no rows", dir.join(file).display())));
    }
    let cols: Vec<usize> = (1..header.len()).filter(|&i| header[i].starts_with("x_")).collect();
    let names = cols.iter().map(|&i| header[i].clone()).collect();
    let t = rows.iter().map(|r| r[0]).collect();
    let x = rows.iter().map(|r| cols.iter().map(|&i| r[i]).collect()).collect();
    Ok((names, Samples { t, x }))
}

/// Distance between the state trajectories of two runs of the same model.
pub fn compare(a: &Path, b: &Path, metric: Metric) -> Result<Comparison, CliError> {
    let (ma, fa) = run_meta(a)?;
    let (mb, fb) = run_meta(b)?;
    if ma != mb {
        return Err(CliError::IncompatibleRuns(format!("model {ma} in {} vs {mb} in {}", a.display(), b.display())));
    }
    let (na, sa) = load(a, &fa)?;
    let (nb, sb) = load(b, &fb)?;
    if na != nb {
        return Err(CliError::IncompatibleRuns(format!("state columns {na:?} vs {nb:?}")));
    }
    let lo = sa.t[0].max(sb.t[0]);
    let hi = sa.t.last().unwrap().min(*sb.t.last().unwrap());
    if hi < lo {
        return Err(CliError::IncompatibleRuns(format!("time windows do not overlap ({lo} > {hi})")));
    }
    let times: Vec<f64> = (0..SAMPLES).map(|i| lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64).collect();
    let diffs: Vec<Vec<f64>> =
        times.iter().map(|&s| sa.at(s).iter().zip(sb.at(s)).map(|(u, v)| (u - v).abs()).collect()).collect();
    let h = (hi - lo) / (SAMPLES - 1) as f64;
    let reduce = |f: &dyn Fn(&[f64]) -> f64| -> f64 {
        match metric {
            Metric::Sup => diffs.iter().map(|d| f(d)).fold(0.0, f64::max),
            Metric::L2 => {
                let sq: Vec<f64> = diffs.iter().map(|d| f(d).powi(2)).collect();
                let inner: f64 = sq[1..sq.len() - 1].iter().sum();
                let ends = if sq.len() > 1 { 0.5 * (sq[0] + sq[sq.len() - 1]) } else { sq[0] };
                ((inner + ends) * h).sqrt()
            }
        }
    };
    let components = na.iter().enumerate().map(|(i, n)| (n.clone(), reduce(&|d: &[f64]| d[i]))).collect();
    let distance = match metric {
        Metric::Sup => reduce(&|d: &[f64]| d.iter().copied().fold(0.0, f64::max)),
        Metric::L2 => reduce(&|d: &[f64]| d.iter().map(|v| v * v).sum::<f64>().sqrt()),
    };
    Ok(Comparison { metric, components, distance, window: (lo, hi) })
}

impl Comparison {
    pub fn passes(&self, threshold: Option<f64>) -> bool {
        threshold.map_or(true, |th| self.distance <= th)
    }

    /// Writes `compare_<metric>.csv` into `dir`.
    pub fn write(&self, dir: &Path, threshold: Option<f64>) -> Result<String, CliError> {
        let mut t = Table::new(&["quantity", "value"]);
        t.row(vec!["t_start".into(), num(self.window.0)]);
        t.row(vec!["t_end".into(), num(self.window.1)]);
        for (n, d) in &self.components {
            t.row(vec![n.clone(), num(*d)]);
        }
        t.row(vec!["distance".into(), num(self.distance)]);
        if let Some(th) = threshold {
            t.row(vec!["threshold".into(), num(th)]);
            t.row(vec!["pass".into(), u8::from(self.passes(threshold)).to_string()]);
        }
        let name = format!("compare_{}.csv", self.metric.id());
        std::fs::create_dir_all(dir)?;
        write_atomic(dir, &name, t.render().as_bytes())?;
        Ok(name)
    }
}
