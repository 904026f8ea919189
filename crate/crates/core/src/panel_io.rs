//! Panel CSV ingestion, missing-data screening, the rank-based normal score
//! transform and its inverse, and the files an estimation run writes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::joint::EstimationResult;
use crate::model::PanelObservations;

/// Missing-data threshold used when none is given.
pub const DEFAULT_MAX_MISSING_FRACTION: f64 = 0.5;

const MIN_LOCATIONS: usize = 2;
const MIN_TIME_POINTS: usize = 8;

/// A labelled `T x n` panel whose cells may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    time_labels: Vec<String>,
    location_labels: Vec<String>,
    /// Time-major rows of length `n`.
    rows: Vec<Vec<Option<f64>>>,
}

impl RawPanel {
    pub fn new(
        time_labels: Vec<String>,
        location_labels: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if rows.len() != time_labels.len() {
            return Err(Error::Dimension(format!(
                "{} time labels for {} rows",
                time_labels.len(),
                rows.len()
            )));
        }
        if let Some((t, r)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != location_labels.len())
        {
            return Err(Error::Dimension(format!(
                "row {} has {} values for {} locations",
                t + 1,
                r.len(),
                location_labels.len()
            )));
        }
        unique("time", &time_labels)?;
        unique("location", &location_labels)?;
        if rows.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("panel values must be finite".into()));
        }
        Ok(Self {
            time_labels,
            location_labels,
            rows,
        })
    }

    /// Wraps a complete panel, labelling instants `1..=T` and locations `s1..sn`.
    pub fn from_observations(panel: &PanelObservations) -> Self {
        let (t_len, n) = (panel.t_len(), panel.n());
        let v = panel.values();
        Self {
            time_labels: (1..=t_len).map(|t| t.to_string()).collect(),
            location_labels: (1..=n).map(|i| format!("s{i}")).collect(),
            rows: (0..t_len)
                .map(|t| (0..n).map(|i| Some(v[(t, i)])).collect())
                .collect(),
        }
    }

    pub fn t_len(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.location_labels.len()
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn location_labels(&self) -> &[String] {
        &self.location_labels
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.rows[t][i]
    }

    pub fn column(&self, i: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r[i]).collect()
    }

    pub fn missing_count(&self, i: usize) -> usize {
        self.rows.iter().filter(|r| r[i].is_none()).count()
    }

    /// The complete values, or an error naming the first missing cell.
    pub fn to_observations(&self) -> Result<PanelObservations> {
        let m = DMatrix::from_fn(self.t_len(), self.n(), |t, i| {
            self.rows[t][i].unwrap_or(f64::NAN)
        });
        if let Some(k) = m.iter().position(|v| v.is_nan()) {
            let (t, i) = (k % self.t_len(), k / self.t_len());
            return Err(Error::InvalidInput(format!(
                "missing value at time '{}', location '{}'",
                self.time_labels[t], self.location_labels[i]
            )));
        }
        PanelObservations::new(m)
    }

    /// Same labels, new complete values.
    pub fn with_values(&self, values: &DMatrix<f64>) -> Result<Self> {
        if values.shape() != (self.t_len(), self.n()) {
            return Err(Error::Dimension(format!(
                "values are {}x{}, panel is {}x{}",
                values.nrows(),
                values.ncols(),
                self.t_len(),
                self.n()
            )));
        }
        let rows = (0..self.t_len())
            .map(|t| (0..self.n()).map(|i| Some(values[(t, i)])).collect())
            .collect();
        Self::new(self.time_labels.clone(), self.location_labels.clone(), rows)
    }

    fn keep_columns(&self, keep: &[usize]) -> Self {
        Self {
            time_labels: self.time_labels.clone(),
            location_labels: keep
                .iter()
                .map(|&i| self.location_labels[i].clone())
                .collect(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i]).collect())
                .collect(),
        }
    }
}

fn unique(what: &str, labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate {what} label '{l}'")));
        }
    }
    Ok(())
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Reads a panel: header row of location labels after a corner cell, then one
/// row per instant starting with its time label. Empty or `NA` cells are missing.
pub fn read_panel<R: Read>(input: R) -> Result<RawPanel> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = rd.records();
    let header = records.next().ok_or_else(|| Error::Parse {
        row: 1,
        column: 1,
        message: "empty file".into(),
    })??;
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "header has no location labels".into(),
        });
    }
    let locations: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        times.push(rec[0].trim().to_string());
        let mut row = Vec::with_capacity(locations.len());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if is_missing(cell) {
                row.push(None);
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("'{cell}' is not finite"),
                });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    RawPanel::new(times, locations, rows)
}

pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<RawPanel> {
    read_panel(BufReader::new(File::open(path)?))
}

/// Writes the layout [`read_panel`] reads; missing cells become `NA`. Values
/// use the shortest representation that parses back to the same number.
pub fn write_panel<W: Write>(out: W, panel: &RawPanel) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(
        std::iter::once("time").chain(panel.location_labels.iter().map(String::as_str)),
    )?;
    for (label, row) in panel.time_labels.iter().zip(&panel.rows) {
        let cells = row
            .iter()
            .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()));
        w.write_record(std::iter::once(label.clone()).chain(cells))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv(path: impl AsRef<Path>, panel: &RawPanel) -> Result<()> {
    write_panel(BufWriter::new(File::create(path)?), panel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedLocation {
    pub label: String,
    pub missing: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub dropped: Vec<DroppedLocation>,
    /// Cells filled by carrying the previous observation forward.
    pub filled_forward: usize,
    /// Leading cells filled from the first observation.
    pub filled_backward: usize,
}

/// Drops locations whose missing fraction exceeds `max_missing_fraction`, then
/// fills remaining gaps with the last observation (leading gaps take the first).
pub fn screen_locations(
    panel: &RawPanel,
    max_missing_fraction: f64,
) -> Result<(RawPanel, ScreenReport)> {
    if !(0.0..=1.0).contains(&max_missing_fraction) {
        return Err(Error::InvalidInput(format!(
            "max missing fraction {max_missing_fraction} is outside [0, 1]"
        )));
    }
    let t_len = panel.t_len();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..panel.n() {
        let missing = panel.missing_count(i);
        let fraction = if t_len == 0 {
            1.0
        } else {
            missing as f64 / t_len as f64
        };
        if fraction > max_missing_fraction || missing == t_len {
            dropped.push(DroppedLocation {
                label: panel.location_labels[i].clone(),
                missing,
                fraction,
            });
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::InvalidInput(
            "every location exceeds the missing-data threshold".into(),
        ));
    }
    if keep.len() < MIN_LOCATIONS || t_len < MIN_TIME_POINTS {
        return Err(Error::InvalidInput(format!(
            "screened panel is {t_len}x{}; at least {MIN_TIME_POINTS} instants and {MIN_LOCATIONS} locations are needed",
            keep.len()
        )));
    }
    let mut out = panel.keep_columns(&keep);
    let (mut forward, mut backward) = (0, 0);
    for i in 0..out.n() {
        let mut last = None;
        for t in 0..t_len {
            match out.rows[t][i] {
                Some(v) => last = Some(v),
                None if last.is_some() => {
                    out.rows[t][i] = last;
                    forward += 1;
                }
                None => {}
            }
        }
        let first = out.rows.iter().find_map(|r| r[i]);
        for row in out.rows.iter_mut() {
            if row[i].is_some() {
                break;
            }
            row[i] = first;
            backward += 1;
        }
    }
    Ok((
        out,
        ScreenReport {
            dropped,
            filled_forward: forward,
            filled_backward: backward,
        },
    ))
}

/// Distinct observed values of one location and the scores they map to,
/// both strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub location: String,
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformState {
    pub t_len: usize,
    pub columns: Vec<ColumnTransform>,
}

impl TransformState {
    pub fn location_labels(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.location.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(s)?;
        for c in &state.columns {
            let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
            if c.values.is_empty()
                || c.values.len() != c.scores.len()
                || !increasing(&c.values)
                || !increasing(&c.scores)
            {
                return Err(Error::InvalidInput(format!(
                    "transform state for '{}' is not a strictly increasing mapping",
                    c.location
                )));
            }
        }
        Ok(state)
    }
}

/// Average ranks (1-based) of `x`, ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut k = 0;
    while k < order.len() {
        let mut e = k;
        while e + 1 < order.len() && x[order[e + 1]] == x[order[k]] {
            e += 1;
        }
        let r = (k + e) as f64 / 2.0 + 1.0;
        for &o in &order[k..=e] {
            ranks[o] = r;
        }
        k = e + 1;
    }
    ranks
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

/// Maps each value of rank `r` among `T` to `Phi^-1((r - 0.5) / T)`, per location.
pub fn pit_to_normal(panel: &RawPanel) -> Result<(PanelObservations, TransformState)> {
    let obs = panel.to_observations()?;
    let t_len = obs.t_len();
    let phi = standard_normal();
    let mut scores = DMatrix::zeros(t_len, obs.n());
    let mut columns = Vec::with_capacity(obs.n());
    for i in 0..obs.n() {
        let x = obs.column(i);
        let ranks = average_ranks(&x);
        if ranks.iter().all(|r| *r == ranks[0]) {
            return Err(Error::InvalidInput(format!(
                "location '{}' is constant; its normal scores are undefined",
                panel.location_labels[i]
            )));
        }
        let mut pairs = Vec::with_capacity(t_len);
        for (t, (&v, &r)) in x.iter().zip(&ranks).enumerate() {
            let s = phi.inverse_cdf((r - 0.5) / t_len as f64);
            scores[(t, i)] = s;
            pairs.push((v, s));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        columns.push(ColumnTransform {
            location: panel.location_labels[i].clone(),
            values: pairs.iter().map(|p| p.0).collect(),
            scores: pairs.iter().map(|p| p.1).collect(),
        });
    }
    Ok((
        PanelObservations::new(scores)?,
        TransformState { t_len, columns },
    ))
}

/// Inverts one score; the flag reports clamping to the observed range.
pub fn invert_score(column: &ColumnTransform, score: f64) -> (f64, bool) {
    let (s, v) = (&column.scores, &column.values);
    let last = s.len() - 1;
    if score.is_nan() {
        return (f64::NAN, false);
    }
    if score <= s[0] {
        return (v[0], score < s[0]);
    }
    if score >= s[last] {
        return (v[last], score > s[last]);
    }
    let k = s.partition_point(|x| *x < score);
    if s[k] == score {
        return (v[k], false);
    }
    let frac = (score - s[k - 1]) / (s[k] - s[k - 1]);
    (v[k - 1] + frac * (v[k] - v[k - 1]), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retransformed {
    pub values: DMatrix<f64>,
    /// Number of scores outside the observed range that were clamped.
    pub clamped: usize,
}

/// Maps scores back to the original scale, column `i` through `state.columns[i]`.
pub fn normal_to_original(scores: &DMatrix<f64>, state: &TransformState) -> Result<Retransformed> {
    if scores.ncols() != state.columns.len() {
        return Err(Error::Dimension(format!(
            "{} score columns for {} transformed locations",
            scores.ncols(),
            state.columns.len()
        )));
    }
    let mut clamped = 0;
    let values = DMatrix::from_fn(scores.nrows(), scores.ncols(), |t, i| {
        let (v, c) = invert_score(&state.columns[i], scores[(t, i)]);
        clamped += usize::from(c);
        v
    });
    if clamped > 0 {
        log::warn!(
            "{clamped} score(s) outside the observed range were clamped to the boundary values"
        );
    }
    Ok(Retransformed { values, clamped })
}

/// Writes a labelled matrix: a header of `corner` then `columns`, and one row
/// per entry of `rows`.
pub fn write_matrix<W: Write>(
    out: W,
    corner: &str,
    rows: &[String],
    columns: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    if m.shape() != (rows.len(), columns.len()) {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, labels are {}x{}",
            m.nrows(),
            m.ncols(),
            rows.len(),
            columns.len()
        )));
    }
    let mut w = csv_writer(out);
    w.write_record(std::iter::once(corner).chain(columns.iter().map(String::as_str)))?;
    for (t, label) in rows.iter().enumerate() {
        w.write_record(
            std::iter::once(label.clone()).chain((0..m.ncols()).map(|i| m[(t, i)].to_string())),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    corner: &str,
    rows: &[String],
    columns: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    write_matrix(
        BufWriter::new(File::create(path)?),
        corner,
        rows,
        columns,
        m,
    )
}

/// Time and location labels attached to estimation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub time: Vec<String>,
    pub locations: Vec<String>,
}

impl Labels {
    pub fn numbered(t_len: usize, n: usize) -> Self {
        Self {
            time: (1..=t_len).map(|t| t.to_string()).collect(),
            locations: (1..=n).map(|i| format!("s{i}")).collect(),
        }
    }

    pub fn of(panel: &RawPanel) -> Self {
        Self {
            time: panel.time_labels.clone(),
            locations: panel.location_labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakRecord {
    /// 1-based instant from which the new level applies.
    pub t: usize,
    pub time_label: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationBreaks {
    pub location: String,
    pub baseline: f64,
    pub breaks: Vec<BreakRecord>,
}

pub fn break_records(result: &EstimationResult, labels: &Labels) -> Vec<LocationBreaks> {
    result
        .breaks
        .iter()
        .enumerate()
        .map(|(i, bs)| LocationBreaks {
            location: labels.locations[i].clone(),
            baseline: result.baseline[i],
            breaks: bs
                .iter()
                .map(|b| BreakRecord {
                    t: b.instant,
                    time_label: labels.time[b.instant - 1].clone(),
                    magnitude: b.magnitude,
                })
                .collect(),
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes `w_hat.csv`, `breaks.json`, `means.csv`, `fitted.csv`,
/// `diagnostics.json` and, when defined, `overall_means.csv` into `dir`.
/// Returns the file names written.
pub fn write_estimation(
    dir: &Path,
    result: &EstimationResult,
    labels: &Labels,
) -> Result<Vec<String>> {
    let n = result.w_hat.n();
    if labels.locations.len() != n || labels.time.len() != result.a_hat.nrows() {
        return Err(Error::Dimension(
            "labels do not match the estimation result".into(),
        ));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str| written.push(name.to_string());
    write_matrix_csv(
        dir.join("w_hat.csv"),
        "location",
        &labels.locations,
        &labels.locations,
        result.w_hat.matrix(),
    )?;
    put("w_hat.csv");
    write_json(&dir.join("breaks.json"), &break_records(result, labels))?;
    put("breaks.json");
    write_matrix_csv(
        dir.join("means.csv"),
        "time",
        &labels.time,
        &labels.locations,
        &result.a_hat,
    )?;
    put("means.csv");
    write_matrix_csv(
        dir.join("fitted.csv"),
        "time",
        &labels.time,
        &labels.locations,
        &result.fitted,
    )?;
    put("fitted.csv");
    match &result.overall_mean {
        Some(m) => {
            write_matrix_csv(
                dir.join("overall_means.csv"),
                "time",
                &labels.time,
                &labels.locations,
                m,
            )?;
            put("overall_means.csv");
        }
        None => {
            let stale = dir.join("overall_means.csv");
            if stale.exists() {
                std::fs::remove_file(stale)?;
            }
        }
    }
    write_json(&dir.join("diagnostics.json"), &result.diagnostics)?;
    put("diagnostics.json");
    Ok(written)
}

pub fn write_json_file<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_json(path.as_ref(), value)
}
