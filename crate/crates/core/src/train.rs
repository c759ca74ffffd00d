//! Plumbing shared by the training loops: loss curves, schedules and
//! divergence handling.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub name: String,
    pub value: f64,
}

/// Per-step loss values, written as `step,loss_name,value` CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub points: Vec<CurvePoint>,
}

impl LossCurve {
    pub fn push(&mut self, step: usize, name: &str, value: f64) {
        self.points.push(CurvePoint {
            step,
            name: name.to_string(),
            value,
        });
    }

    /// Values of one named series in step order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.points.iter().filter(|p| p.name == name).map(|p| p.value).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss_name,value\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{:e}\n", p.step, p.name, p.value));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = Self::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            let mut parts = line.splitn(3, ',');
            let bad = || Error::decode(path, format!("malformed line {}", n + 1));
            let step = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let name = parts.next().ok_or_else(bad)?;
            let value = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            out.push(step, name, value);
        }
        Ok(out)
    }
}

/// Cosine decay from `base` to a tenth of it over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    base * (0.1 + 0.9 * 0.5 * (1.0 + (PI * t).cos()))
}

/// Where a training loop writes its checkpoint while running.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Overwritten every `log_every` steps and at the end.
    pub checkpoint: Option<PathBuf>,
    /// Overrides the configured step count.
    pub steps: Option<usize>,
}

pub(crate) struct Progress<'a> {
    pub stage: &'static str,
    pub opts: &'a TrainOptions,
    pub last_good: Option<PathBuf>,
}

impl<'a> Progress<'a> {
    pub fn new(stage: &'static str, opts: &'a TrainOptions) -> Self {
        Self {
            stage,
            opts,
            last_good: None,
        }
    }

    pub fn check(&self, step: usize, name: &str, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence {
                stage: self.stage.to_string(),
                step,
                detail: format!("{name} loss is {value}"),
                last_good: self.last_good.clone(),
            })
        }
    }

    pub fn save(&mut self, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if let Some(path) = &self.opts.checkpoint {
            write(path)?;
            self.last_good = Some(path.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut c = LossCurve::default();
        c.push(0, "coord", 0.25);
        c.push(0, "visual", 1e-7);
        c.push(1, "coord", 0.125);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        c.write_csv(&p).unwrap();
        assert_eq!(LossCurve::read_csv(&p).unwrap(), c);
        assert_eq!(c.series("coord"), vec![0.25, 0.125]);
        assert!(c.to_csv().starts_with("step,loss_name,value\n"));
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(1.0, 0, 100), 1.0);
        assert!((cosine_lr(1.0, 100, 100) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_divergence() {
        let opts = TrainOptions::default();
        let p = Progress::new("khp", &opts);
        assert!(p.check(3, "coord", 1.0).is_ok());
        assert!(matches!(
            p.check(3, "coord", f64::NAN),
            Err(Error::Divergence { step: 3, .. })
        ));
    }
}
