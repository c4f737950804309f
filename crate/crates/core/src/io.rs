//! CSV and JSON artifacts. Every writer goes through a temporary file in the
//! destination directory and a rename, so readers never see partial output.
//! Reals are written in shortest round-trip form.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::StringRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dgp::{CovariateTable, ExperimentDataset, ExperimentRecord, PanelDataset, UnitParams, UnitSeries};
use crate::error::{Error, Result};
use crate::expanalysis::{StratumReport, Target, UnitScore};
use crate::learner::UnitLabel;
use crate::panel::{Skip, UnitEffectEstimate};

pub const TRUTH_HEADER: [&str; 7] = ["unit_id", "a", "theta", "mu", "beta", "psi", "gamma"];
pub const EXPERIMENT_HEADER: [&str; 4] = ["unit_id", "treated", "y_pre", "y_post"];
pub const EFFECTS_HEADER: [&str; 6] = ["unit_id", "beta_hat", "intercept", "stderr_beta", "n_obs", "r_squared"];
pub const SKIPS_HEADER: [&str; 2] = ["unit_id", "reason"];
pub const LABELS_HEADER: [&str; 2] = ["unit_id", "label"];
pub const SCORES_HEADER: [&str; 2] = ["unit_id", "score"];
pub const STRATA_HEADER: [&str; 7] = [
    "stratum_index",
    "score_low",
    "score_high",
    "n_treated",
    "n_control",
    "ate",
    "stderr",
];
pub const TARGETS_HEADER: [&str; 3] = ["unit_id", "score", "rank"];
pub const FIGURE_HEADER: [&str; 5] = ["stratum_index", "score_mid", "ate", "ci_low", "ci_high"];

/// Normal quantile for the two-sided 95% intervals in figure data.
const CI_Z: f64 = 1.96;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Write `path` atomically through `body`.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err(path))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(path))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for row in rows {
            out.write_record(&row)?;
        }
        out.flush()
    })
}

fn owned(header: &[&str]) -> Vec<String> {
    header.iter().map(|s| (*s).to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Streams the rows of a CSV file after checking the header.
struct Table {
    path: PathBuf,
    reader: csv::Reader<BufReader<File>>,
    header: StringRecord,
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    rec: &'a StringRecord,
    header: &'a StringRecord,
}

impl Row<'_> {
    fn parse<T: FromStr>(&self, idx: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.rec.get(idx).unwrap_or("");
        raw.trim().parse().map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: format!("column {}: cannot parse {raw:?}: {e}", &self.header[idx]),
        })
    }

    fn parse_opt(&self, idx: usize) -> Result<Option<f64>> {
        if self.rec.get(idx).is_none_or(|s| s.trim().is_empty()) {
            Ok(None)
        } else {
            self.parse(idx).map(Some)
        }
    }

    fn parse_bool01(&self, idx: usize) -> Result<bool> {
        match self.parse::<u8>(idx)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: self.line,
                message: format!("column {}: expected 0 or 1, got {v}", &self.header[idx]),
            }),
        }
    }
}

impl Table {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(BufReader::new(file));
        let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        Ok(Table {
            path: path.to_path_buf(),
            reader,
            header,
        })
    }

    fn schema(&self, message: String) -> Error {
        Error::Schema {
            path: self.path.clone(),
            message,
        }
    }

    fn expect_header(&self, expected: &[&str]) -> Result<()> {
        let got: Vec<&str> = self.header.iter().collect();
        if got != expected {
            return Err(self.schema(format!("expected columns {expected:?}, found {got:?}")));
        }
        Ok(())
    }

    /// Header of the form `fixed..., {prefix}1, {prefix}2, ...`; returns the
    /// number of numbered columns.
    fn expect_numbered(&self, fixed: &[&str], prefix: &str) -> Result<usize> {
        let got: Vec<&str> = self.header.iter().collect();
        if got.len() < fixed.len() || got[..fixed.len()] != *fixed {
            return Err(self.schema(format!("expected leading columns {fixed:?}, found {got:?}")));
        }
        for (k, name) in got[fixed.len()..].iter().enumerate() {
            let want = format!("{prefix}{}", k + 1);
            if *name != want {
                return Err(self.schema(format!("expected column {want}, found {name}")));
            }
        }
        Ok(got.len() - fixed.len())
    }

    fn for_each<F: FnMut(&Row<'_>) -> Result<()>>(mut self, mut f: F) -> Result<()> {
        let mut rec = StringRecord::new();
        let width = self.header.len();
        loop {
            match self.reader.read_record(&mut rec) {
                Ok(true) => {}
                Ok(false) => return Ok(()),
                Err(e) => return Err(csv_err(&self.path, e)),
            }
            let line = rec.position().map_or(0, csv::Position::line);
            if rec.len() != width {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line,
                    message: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            f(&Row {
                path: &self.path,
                line,
                rec: &rec,
                header: &self.header,
            })?;
        }
    }
}

pub fn write_panel(path: &Path, panel: &PanelDataset) -> Result<()> {
    let mut header = owned(&["unit_id", "t", "x", "y"]);
    header.extend((1..=panel.v_dim).map(|j| format!("v{j}")));
    let rows = panel.units.iter().flat_map(|u| {
        (0..u.len()).map(move |i| {
            let mut row = vec![
                u.unit_id.to_string(),
                u.t[i].to_string(),
                u.x[i].to_string(),
                u.y[i].to_string(),
            ];
            row.extend(u.v[i * panel.v_dim..(i + 1) * panel.v_dim].iter().map(f64::to_string));
            row
        })
    });
    write_csv(path, &header, rows)
}

/// One panel row: period, x, y and the V values.
type Observation = (u32, f64, f64, Vec<f64>);

/// Units keep their order of first appearance; rows within a unit are sorted
/// by period.
pub fn read_panel(path: &Path) -> Result<PanelDataset> {
    let table = Table::open(path)?;
    let v_dim = table.expect_numbered(&["unit_id", "t", "x", "y"], "v")?;
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut rows: Vec<Vec<Observation>> = Vec::new();
    let mut ids = Vec::new();
    table.for_each(|r| {
        let id: u64 = r.parse(0)?;
        let slot = *index.entry(id).or_insert_with(|| {
            ids.push(id);
            rows.push(Vec::new());
            rows.len() - 1
        });
        let v = (0..v_dim).map(|j| r.parse(4 + j)).collect::<Result<Vec<f64>>>()?;
        rows[slot].push((r.parse(1)?, r.parse(2)?, r.parse(3)?, v));
        Ok(())
    })?;
    let units = ids
        .into_iter()
        .zip(rows)
        .map(|(unit_id, mut obs)| {
            obs.sort_by_key(|o| o.0);
            let mut s = UnitSeries {
                unit_id,
                t: Vec::with_capacity(obs.len()),
                x: Vec::with_capacity(obs.len()),
                y: Vec::with_capacity(obs.len()),
                v: Vec::with_capacity(obs.len() * v_dim),
            };
            for (t, x, y, v) in obs {
                s.t.push(t);
                s.x.push(x);
                s.y.push(y);
                s.v.extend(v);
            }
            s
        })
        .collect();
    let panel = PanelDataset { v_dim, units };
    panel.validate()?;
    Ok(panel)
}

pub fn write_covariates(path: &Path, cov: &CovariateTable) -> Result<()> {
    let mut header = owned(&["unit_id"]);
    header.extend((1..=cov.dim).map(|j| format!("c{j}")));
    let rows = cov.unit_ids.iter().zip(&cov.rows).map(|(id, row)| {
        std::iter::once(id.to_string())
            .chain(row.iter().map(f64::to_string))
            .collect()
    });
    write_csv(path, &header, rows)
}

pub fn read_covariates(path: &Path) -> Result<CovariateTable> {
    let table = Table::open(path)?;
    let dim = table.expect_numbered(&["unit_id"], "c")?;
    let mut cov = CovariateTable {
        dim,
        unit_ids: Vec::new(),
        rows: Vec::new(),
    };
    table.for_each(|r| {
        cov.unit_ids.push(r.parse(0)?);
        cov.rows.push((0..dim).map(|j| r.parse(1 + j)).collect::<Result<_>>()?);
        Ok(())
    })?;
    Ok(cov)
}

pub fn write_experiment(path: &Path, exp: &ExperimentDataset) -> Result<()> {
    let rows = exp.records.iter().map(|r| {
        vec![
            r.unit_id.to_string(),
            u8::from(r.treated).to_string(),
            r.y_pre.to_string(),
            r.y_post.to_string(),
        ]
    });
    write_csv(path, &owned(&EXPERIMENT_HEADER), rows)
}

pub fn read_experiment(path: &Path) -> Result<ExperimentDataset> {
    let table = Table::open(path)?;
    table.expect_header(&EXPERIMENT_HEADER)?;
    let mut records = Vec::new();
    table.for_each(|r| {
        records.push(ExperimentRecord {
            unit_id: r.parse(0)?,
            treated: r.parse_bool01(1)?,
            y_pre: r.parse(2)?,
            y_post: r.parse(3)?,
        });
        Ok(())
    })?;
    ExperimentDataset::new(records)
}

pub fn write_truth(path: &Path, units: &[UnitParams]) -> Result<()> {
    let rows = units.iter().map(|u| {
        vec![
            u.unit_id.to_string(),
            u.affinity.to_string(),
            u.theta.to_string(),
            u.mu.to_string(),
            u.beta.to_string(),
            u.psi.to_string(),
            u.gamma.to_string(),
        ]
    });
    write_csv(path, &owned(&TRUTH_HEADER), rows)
}

pub fn read_truth(path: &Path) -> Result<Vec<UnitParams>> {
    let table = Table::open(path)?;
    table.expect_header(&TRUTH_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r| {
        out.push(UnitParams {
            unit_id: r.parse(0)?,
            affinity: r.parse(1)?,
            theta: r.parse(2)?,
            mu: r.parse(3)?,
            beta: r.parse(4)?,
            psi: r.parse(5)?,
            gamma: r.parse(6)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_effects(path: &Path, estimates: &[UnitEffectEstimate]) -> Result<()> {
    let rows = estimates.iter().map(|e| {
        vec![
            e.unit_id.to_string(),
            e.beta_hat.to_string(),
            e.intercept.to_string(),
            e.stderr_beta.to_string(),
            e.n_obs.to_string(),
            e.r_squared.to_string(),
        ]
    });
    write_csv(path, &owned(&EFFECTS_HEADER), rows)
}

pub fn read_effects(path: &Path) -> Result<Vec<UnitEffectEstimate>> {
    let table = Table::open(path)?;
    table.expect_header(&EFFECTS_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r| {
        out.push(UnitEffectEstimate {
            unit_id: r.parse(0)?,
            beta_hat: r.parse(1)?,
            intercept: r.parse(2)?,
            stderr_beta: r.parse(3)?,
            n_obs: r.parse(4)?,
            r_squared: r.parse(5)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_skips(path: &Path, skips: &[Skip]) -> Result<()> {
    let rows = skips.iter().map(|s| vec![s.unit_id.to_string(), s.reason.to_string()]);
    write_csv(path, &owned(&SKIPS_HEADER), rows)
}

pub fn write_labels(path: &Path, labels: &[UnitLabel]) -> Result<()> {
    let rows = labels.iter().map(|l| vec![l.unit_id.to_string(), l.label.to_string()]);
    write_csv(path, &owned(&LABELS_HEADER), rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<UnitLabel>> {
    let table = Table::open(path)?;
    table.expect_header(&LABELS_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r| {
        out.push(UnitLabel {
            unit_id: r.parse(0)?,
            label: u8::from(r.parse_bool01(1)?),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &[UnitScore]) -> Result<()> {
    let rows = scores.iter().map(|s| vec![s.unit_id.to_string(), s.score.to_string()]);
    write_csv(path, &owned(&SCORES_HEADER), rows)
}

pub fn read_scores(path: &Path) -> Result<Vec<UnitScore>> {
    let table = Table::open(path)?;
    table.expect_header(&SCORES_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r| {
        out.push(UnitScore {
            unit_id: r.parse(0)?,
            score: r.parse(1)?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Missing effects and standard errors are written as empty fields.
pub fn write_strata(path: &Path, strata: &[StratumReport]) -> Result<()> {
    let rows = strata.iter().map(|s| {
        vec![
            s.stratum_index.to_string(),
            s.score_low.to_string(),
            s.score_high.to_string(),
            s.n_treated.to_string(),
            s.n_control.to_string(),
            opt(s.ate),
            opt(s.stderr),
        ]
    });
    write_csv(path, &owned(&STRATA_HEADER), rows)
}

pub fn read_strata(path: &Path) -> Result<Vec<StratumReport>> {
    let table = Table::open(path)?;
    table.expect_header(&STRATA_HEADER)?;
    let mut out = Vec::new();
    table.for_each(|r| {
        out.push(StratumReport {
            stratum_index: r.parse(0)?,
            score_low: r.parse(1)?,
            score_high: r.parse(2)?,
            n_treated: r.parse(3)?,
            n_control: r.parse(4)?,
            ate: r.parse_opt(5)?,
            stderr: r.parse_opt(6)?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_targets(path: &Path, targets: &[Target]) -> Result<()> {
    let rows = targets
        .iter()
        .map(|t| vec![t.unit_id.to_string(), t.score.to_string(), t.rank.to_string()]);
    write_csv(path, &owned(&TARGETS_HEADER), rows)
}

/// Plot-ready effect by score stratum with 95% normal intervals. Strata
/// without a usable estimate appear only as `#` comment lines.
pub fn emit_figure_data(path: &Path, strata: &[StratumReport]) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(&mut *w);
        out.write_record(FIGURE_HEADER)?;
        out.flush()?;
        drop(out);
        for s in strata {
            match (s.ate, s.stderr) {
                (Some(ate), Some(se)) => {
                    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(&mut *w);
                    out.write_record([
                        s.stratum_index.to_string(),
                        s.score_mid().to_string(),
                        ate.to_string(),
                        (ate - CI_Z * se).to_string(),
                        (ate + CI_Z * se).to_string(),
                    ])?;
                    out.flush()?;
                }
                _ => writeln!(
                    w,
                    "# stratum {} excluded: {} treated, {} control",
                    s.stratum_index, s.n_treated, s.n_control
                )?,
            }
        }
        Ok(())
    })
}
