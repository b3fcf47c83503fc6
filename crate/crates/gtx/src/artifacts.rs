//! Artifact directories, the resume journal and the work pool.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, Result};
use crate::io::{append_jsonl, read_jsonl};

pub const CONFIG_ECHO: &str = "config_echo.toml";
pub const PROGRESS: &str = "progress.jsonl";
pub const SUMMARY: &str = "summary.txt";

/// Line diff of two texts: `-` lines only in `old`, `+` lines only in
/// `new`, via a longest common subsequence.
pub fn line_diff(old: &str, new: &str) -> String {
    let a: Vec<&str> = old.lines().collect();
    let b: Vec<&str> = new.lines().collect();
    let mut lcs = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            lcs[i][j] = if a[i] == b[j] { lcs[i + 1][j + 1] + 1 } else { lcs[i + 1][j].max(lcs[i][j + 1]) };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = String::new();
    while i < a.len() || j < b.len() {
        if i < a.len() && j < b.len() && a[i] == b[j] {
            i += 1;
            j += 1;
        } else if i < a.len() && (j == b.len() || lcs[i + 1][j] >= lcs[i][j + 1]) {
            out.push_str(&format!("- {}\n", a[i]));
            i += 1;
        } else {
            out.push_str(&format!("+ {}\n", b[j]));
            j += 1;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JournalLine<T> {
    cell: String,
    result: T,
}

/// An output directory for one command run.
pub struct RunDir {
    pub path: PathBuf,
    journal: Mutex<()>,
}

impl RunDir {
    /// Creates `path` (or accepts it empty) and writes the config echo.
    /// With `resume`, a non-empty directory must hold the same echo.
    pub fn open(path: &Path, echo: &str, resume: bool) -> Result<Self> {
        let echo_path = path.join(CONFIG_ECHO);
        let nonempty = path.exists() && fs::read_dir(path).map_err(io_at(path))?.next().is_some();
        if nonempty {
            if !resume {
                return Err(CliError::NotEmpty(path.to_path_buf()));
            }
            let old = fs::read_to_string(&echo_path).map_err(io_at(&echo_path))?;
            if old != echo {
                return Err(CliError::ResumeMismatch {
                    path: echo_path,
                    diff: line_diff(&old, echo),
                });
            }
        } else {
            fs::create_dir_all(path).map_err(io_at(path))?;
            fs::write(&echo_path, echo).map_err(io_at(&echo_path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            journal: Mutex::new(()),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        fs::create_dir_all(&p).map_err(io_at(&p))?;
        Ok(p)
    }

    /// Results of cells finished by an earlier, interrupted run. Lines of
    /// another result type belong to another stage and are skipped.
    pub fn completed<T: DeserializeOwned>(&self) -> Result<HashMap<String, T>> {
        let p = self.file(PROGRESS);
        if !p.exists() {
            return Ok(HashMap::new());
        }
        let lines: Vec<JournalLine<serde_json::Value>> = read_jsonl(&p)?;
        Ok(lines
            .into_iter()
            .filter_map(|l| serde_json::from_value(l.result).ok().map(|r| (l.cell, r)))
            .collect())
    }

    fn record<T: Serialize>(&self, cell: &str, result: &T) -> Result<()> {
        let _guard = self.journal.lock().expect("journal lock");
        append_jsonl(&self.file(PROGRESS), &JournalLine { cell: cell.to_string(), result })
    }

    /// Runs every cell not yet in the journal on `pool`, journaling each
    /// success, and returns all outcomes in the order of `cells`.
    pub fn run_cells<C, T, F>(&self, pool: &rayon::ThreadPool, cells: &[C], key: impl Fn(&C) -> String + Sync, f: F) -> Result<Vec<std::result::Result<T, String>>>
    where
        C: Sync,
        T: Serialize + DeserializeOwned + Send + Sync + Clone,
        F: Fn(&C) -> std::result::Result<T, String> + Sync,
    {
        let done: HashMap<String, T> = self.completed()?;
        let out: Vec<Result<std::result::Result<T, String>>> = pool.install(|| {
            cells
                .par_iter()
                .map(|c| {
                    let k = key(c);
                    if let Some(r) = done.get(&k) {
                        return Ok(Ok(r.clone()));
                    }
                    let r = f(c);
                    if let Ok(v) = &r {
                        self.record(&k, v)?;
                    }
                    Ok(r)
                })
                .collect()
        });
        out.into_iter().collect()
    }
}

/// Pool size: `--threads`, else `GTX_THREADS`, else the available cores.
pub fn thread_count(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("GTX_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("GTX_THREADS must be a positive integer, got `{v}`")))?,
            Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}

pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start the work pool: {e}")))
}
