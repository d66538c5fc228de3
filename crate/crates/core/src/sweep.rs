//! Cartesian sweeps over `(N, p, seed index)` cells.
//!
//! Each cell gets the derived seed `derive_seed(global, [N, p, index])`, so a
//! cell's result does not depend on which worker ran it or in what order.
//! Completed cells are appended to `cells.jsonl` in the output directory; a
//! rerun skips them, which makes interrupted sweeps resumable. The canonical
//! CSV sorts rows by cell and leaves out wall-clock columns.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabsError, Result};
use crate::seeding::derive_seed;

pub const CELLS_FILE: &str = "cells.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub sizes: Vec<usize>,
    /// Depths; sweeps without a depth axis use `[0]`.
    pub depths: Vec<usize>,
    pub seeds: usize,
    pub global_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    pub seed_index: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.depths.is_empty() || self.seeds == 0 {
            return invalid("a sweep needs at least one size, one depth and one seed");
        }
        Ok(())
    }

    /// Cells in canonical order: by N, then p, then seed index.
    pub fn cells(&self) -> Vec<Cell> {
        let mut sizes = self.sizes.clone();
        let mut depths = self.depths.clone();
        sizes.sort_unstable();
        sizes.dedup();
        depths.sort_unstable();
        depths.dedup();
        let mut out = Vec::with_capacity(sizes.len() * depths.len() * self.seeds);
        for &n in &sizes {
            for &p in &depths {
                for s in 0..self.seeds {
                    out.push(Cell { n, p, seed_index: s, seed: derive_seed(self.global_seed, &[n as u64, p as u64, s as u64]) });
                }
            }
        }
        out
    }
}

/// A row type with a fixed CSV layout. `canonical_fields` must leave out
/// anything that varies between identical runs, such as wall time.
pub trait SweepRow: Serialize + DeserializeOwned + Send {
    const HEADER: &'static [&'static str];
    const CANONICAL_HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    fn canonical_fields(&self) -> Vec<String>;
}

#[derive(Serialize, Deserialize)]
struct Record<R> {
    cell: Cell,
    row: R,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug)]
pub struct SweepOutcome<R> {
    /// Completed cells in canonical order.
    pub rows: Vec<(Cell, R)>,
    pub failed: Vec<FailedCell>,
    /// Cells taken from an earlier run's `cells.jsonl`.
    pub resumed: usize,
}

impl<R: SweepRow> SweepOutcome<R> {
    pub fn csv(&self) -> String {
        render_csv(R::HEADER, self.rows.iter().map(|(_, r)| r.fields()))
    }

    pub fn canonical_csv(&self) -> String {
        render_csv(R::CANONICAL_HEADER, self.rows.iter().map(|(_, r)| r.canonical_fields()))
    }
}

fn render_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for fields in rows {
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Runs `work` on every cell not already recorded in `dir/cells.jsonl`.
///
/// `workers = None` uses the current rayon pool. Failed cells are reported and
/// not recorded, so a rerun retries them.
pub fn run_sweep<R, F>(spec: &SweepSpec, workers: Option<usize>, dir: Option<&Path>, work: F) -> Result<SweepOutcome<R>>
where
    R: SweepRow,
    F: Fn(&Cell) -> Result<R> + Sync,
{
    spec.validate()?;
    let cells = spec.cells();
    let mut done: BTreeMap<Cell, R> = BTreeMap::new();
    let mut sink = None;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CELLS_FILE);
        done = load_records(&path, &cells)?;
        sink = Some(Mutex::new(open_for_append(&path)?));
    }
    let resumed = done.len();
    let todo: Vec<Cell> = cells.iter().filter(|c| !done.contains_key(c)).copied().collect();
    log::info!("sweep: {} cells, {} resumed, {} to run", cells.len(), resumed, todo.len());

    let run_all = || -> Result<Vec<(Cell, Result<R>)>> {
        todo.par_iter()
            .map(|cell| {
                let result = work(cell);
                if let (Ok(row), Some(sink)) = (&result, &sink) {
                    let line = serde_json::to_string(&Record { cell: *cell, row })?;
                    let mut f = sink.lock().map_err(|_| LabsError::Internal("sweep log lock poisoned".into()))?;
                    writeln!(f, "{line}")?;
                    f.flush()?;
                }
                Ok::<_, LabsError>((*cell, result))
            })
            .collect()
    };
    let fresh = match workers {
        Some(w) => {
            if w == 0 {
                return invalid("worker count must be positive");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| LabsError::Internal(format!("cannot start worker pool: {e}")))?
                .install(run_all)?
        }
        None => run_all()?,
    };

    let mut failed = Vec::new();
    for (cell, result) in fresh {
        match result {
            Ok(row) => {
                done.insert(cell, row);
            }
            Err(e) => {
                log::warn!("cell N={} p={} seed index {} failed: {e}", cell.n, cell.p, cell.seed_index);
                failed.push(FailedCell { cell, error: e.to_string() });
            }
        }
    }
    failed.sort_by_key(|f| f.cell);
    Ok(SweepOutcome { rows: done.into_iter().collect(), failed, resumed })
}

fn open_for_append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

/// Reads completed cells, ignoring a torn final line and any cell that is
/// not part of `cells` (for example after the spec changed). A torn line is
/// cut off so that appends start on a fresh line.
fn load_records<R: SweepRow>(path: &Path, cells: &[Cell]) -> Result<BTreeMap<Cell, R>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let wanted: std::collections::HashSet<Cell> = cells.iter().copied().collect();
    let mut good_len = 0u64;
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        if !line.ends_with('\n') {
            log::warn!("{}: dropping incomplete final record", path.display());
            break;
        }
        let record: Record<R> = serde_json::from_str(line.trim_end())
            .map_err(|e| LabsError::Format(format!("{}: bad record at byte {good_len}: {e}", path.display())))?;
        good_len += read as u64;
        if wanted.contains(&record.cell) {
            out.insert(record.cell, record.row);
        }
    }
    let file = OpenOptions::new().write(true).open(path)?;
    if file.metadata()?.len() != good_len {
        file.set_len(good_len)?;
    }
    Ok(out)
}

/// Writes `name` under `dir`, returning the path.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        value: u64,
        wall_ms: f64,
    }

    impl SweepRow for Row {
        const HEADER: &'static [&'static str] = &["value", "wall_ms"];
        const CANONICAL_HEADER: &'static [&'static str] = &["value"];
        fn fields(&self) -> Vec<String> {
            vec![self.value.to_string(), fmt_f64(self.wall_ms)]
        }
        fn canonical_fields(&self) -> Vec<String> {
            vec![self.value.to_string()]
        }
    }

    fn spec() -> SweepSpec {
        SweepSpec { sizes: vec![5, 4], depths: vec![1, 2], seeds: 2, global_seed: 9 }
    }

    fn work(c: &Cell) -> Result<Row> {
        Ok(Row { value: c.seed % 1000 + c.n as u64, wall_ms: 0.5 })
    }

    #[test]
    fn two_by_two_by_two_gives_eight_rows_in_canonical_order() {
        let out = run_sweep(&spec(), Some(2), None, work).unwrap();
        assert_eq!(out.rows.len(), 8);
        let keys: Vec<(usize, usize, usize)> = out.rows.iter().map(|(c, _)| (c.n, c.p, c.seed_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(out.canonical_csv().lines().count(), 9);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let a = run_sweep(&spec(), Some(1), None, work).unwrap();
        let b = run_sweep(&spec(), Some(8), None, work).unwrap();
        assert_eq!(a.canonical_csv(), b.canonical_csv());
    }

    #[test]
    fn failed_cells_are_listed_and_retried() {
        let dir = tempdir();
        let flaky = |c: &Cell| if c.n == 5 && c.p == 2 { invalid("boom") } else { work(c) };
        let first = run_sweep(&spec(), Some(2), Some(&dir), flaky).unwrap();
        assert_eq!(first.rows.len(), 6);
        assert_eq!(first.failed.len(), 2);
        let second = run_sweep(&spec(), Some(2), Some(&dir), work).unwrap();
        assert_eq!(second.resumed, 6);
        assert!(second.failed.is_empty());
        assert_eq!(second.canonical_csv(), run_sweep(&spec(), Some(1), None, work).unwrap().canonical_csv());
    }

    #[test]
    fn torn_log_is_repaired_on_resume() {
        let dir = tempdir();
        let full = run_sweep(&spec(), Some(1), Some(&dir), work).unwrap();
        let path = dir.join(CELLS_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let keep: Vec<&str> = text.lines().take(3).collect();
        std::fs::write(&path, format!("{}\n{{\"cell\":{{\"N\":5", keep.join("\n"))).unwrap();
        let resumed = run_sweep(&spec(), Some(3), Some(&dir), work).unwrap();
        assert_eq!(resumed.resumed, 3);
        assert_eq!(resumed.canonical_csv(), full.canonical_csv());
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, 8);
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!("labs-sweep-{}-{}", std::process::id(), rand::random::<u64>()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
