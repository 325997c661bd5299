//! Labelled sample sets and their CSV form.
//!
//! Within each split samples alternate fake, real, fake, ... so any prefix is
//! close to balanced.

use std::fmt::Write as _;
use std::path::Path;

use super::config::ExperimentConfig;
use super::experiment::{stream, stream_id, Domain, Experiment};
use crate::error::{Error, Result};
use crate::manifold::{Label, LabeledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub index: u64,
    pub split: Split,
    pub sample: LabeledSample,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<DataRow>,
}

impl Dataset {
    /// Draws every split for one run seed and signal strength. Sample `i`
    /// uses its own stream, so the draw does not depend on thread count and
    /// the on-manifold part is shared across signal strengths.
    pub fn generate(
        cfg: &ExperimentConfig,
        exp: &Experiment,
        seed: u64,
        signal: f64,
    ) -> Result<Self> {
        let d = &cfg.data;
        let plan = [
            (Split::Train, d.train_per_class),
            (Split::Val, d.val_per_class),
            (Split::Test, d.test_per_class),
        ];
        let mut rows =
            Vec::with_capacity(2 * (d.train_per_class + d.val_per_class + d.test_per_class));
        let mut index = 0u64;
        for (split, per_class) in plan {
            for j in 0..2 * per_class {
                let mut rng = stream(seed, Domain::Sample, index);
                let sample = if j % 2 == 0 {
                    exp.manifold.sample_fake(&mut rng)
                } else {
                    exp.manifold.sample_real(signal, &mut rng)?
                };
                rows.push(DataRow {
                    index,
                    split,
                    sample: sample.with_seed_id(stream_id(Domain::Sample, index)),
                });
                index += 1;
            }
        }
        Ok(Self { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.sample.point.len())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DataRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,split,label,signal,seed_id");
        for i in 0..self.dim() {
            write!(out, ",x{i}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{:?},{}",
                r.index,
                r.split.as_str(),
                r.sample.label.as_str(),
                r.sample.signal,
                r.sample.seed_id
            )
            .unwrap();
            for v in &r.sample.point {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, source: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 6 || cols[..5] != ["index", "split", "label", "signal", "seed_id"] {
            return Err(parse_err(1, format!("unexpected header {header:?}")));
        }
        let dim = cols.len() - 5;
        let mut rows = Vec::new();
        for (n, line) in lines {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 5 {
                return Err(parse_err(
                    line_no,
                    format!("expected {} fields, found {}", dim + 5, fields.len()),
                ));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("bad number {s:?}: {e}")))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse::<u64>()
                    .map_err(|e| parse_err(line_no, format!("bad integer {s:?}: {e}")))
            };
            let split: Split = fields[1]
                .parse()
                .map_err(|e: Error| parse_err(line_no, e.to_string()))?;
            let label: Label = fields[2]
                .parse()
                .map_err(|e: Error| parse_err(line_no, e.to_string()))?;
            let point = fields[5..]
                .iter()
                .map(|s| num(s))
                .collect::<Result<Vec<_>>>()?;
            rows.push(DataRow {
                index: int(fields[0])?,
                split,
                sample: LabeledSample {
                    point,
                    label,
                    signal: num(fields[3])?,
                    seed_id: int(fields[4])?,
                },
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.train_per_class = 3;
        cfg.data.val_per_class = 1;
        cfg.data.test_per_class = 2;
        cfg
    }

    #[test]
    fn layout_and_balance() {
        let cfg = small_cfg();
        let exp = Experiment::build(&cfg, 1, 0.05).unwrap();
        let ds = Dataset::generate(&cfg, &exp, 1, 0.5).unwrap();
        assert_eq!(ds.rows.len(), 12);
        assert_eq!(ds.split(Split::Train).count(), 6);
        assert_eq!(ds.split(Split::Val).count(), 2);
        for (i, r) in ds.rows.iter().enumerate() {
            assert_eq!(r.index, i as u64);
        }
        for split in [Split::Train, Split::Val, Split::Test] {
            let fakes = ds
                .split(split)
                .filter(|r| r.sample.label == Label::Fake)
                .count();
            assert_eq!(2 * fakes, ds.split(split).count());
        }
        for r in &ds.rows {
            let dist = exp.manifold.distance_to_manifold(&r.sample.point).unwrap();
            let want = if r.sample.label == Label::Real {
                0.5
            } else {
                0.0
            };
            assert!((dist - want).abs() < 1e-12);
        }
    }

    #[test]
    fn signal_only_moves_real_samples() {
        let cfg = small_cfg();
        let exp = Experiment::build(&cfg, 1, 0.05).unwrap();
        let a = Dataset::generate(&cfg, &exp, 1, 0.5).unwrap();
        let b = Dataset::generate(&cfg, &exp, 1, 0.1).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let pa = exp.manifold.project(&ra.sample.point).unwrap();
            let pb = exp.manifold.project(&rb.sample.point).unwrap();
            for (u, v) in pa.iter().zip(&pb) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = small_cfg();
        let exp = Experiment::build(&cfg, 2, 0.05).unwrap();
        let ds = Dataset::generate(&cfg, &exp, 2, 0.3).unwrap();
        let text = ds.to_csv();
        assert!(text.starts_with("index,split,label,signal,seed_id,x0,"));
        let back = Dataset::from_csv(&text, Path::new("mem.csv")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_errors_report_line() {
        let text = "index,split,label,signal,seed_id,x0\n0,train,fake,0.0,1,0.5\n1,train,maybe,0.0,1,0.5\n";
        match Dataset::from_csv(text, Path::new("d.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
