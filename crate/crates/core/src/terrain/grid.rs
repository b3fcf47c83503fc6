use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::graph::{from_undirected_edges, Graph};
use crate::math;
use crate::tensor::Tensor;

/// Row-major elevation raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElevationGrid {
    nrows: usize,
    ncols: usize,
    cell_size: f64,
    elevations: Vec<f64>,
}

impl ElevationGrid {
    pub fn new(nrows: usize, ncols: usize, cell_size: f64, elevations: Vec<f64>) -> Result<Self> {
        if nrows < 2 || ncols < 2 {
            return Err(validation(format!("grid must be at least 2x2, got {nrows}x{ncols}")));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(validation(format!("cell size must be positive, got {cell_size}")));
        }
        if elevations.len() != nrows * ncols {
            return Err(validation(format!(
                "{} elevations for a {nrows}x{ncols} grid",
                elevations.len()
            )));
        }
        if let Some(i) = elevations.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite {
                context: "elevation grid".into(),
                index: i,
            });
        }
        Ok(Self {
            nrows,
            ncols,
            cell_size,
            elevations,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.elevations[i * self.ncols + j]
    }

    /// Parses `nrows ncols cell_size` followed by `nrows` lines of `ncols`
    /// elevations. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let perr = |line: usize, message: String| Error::Parse { line: line + 1, message };
        if fields.len() != 3 {
            return Err(perr(hline, "header must be `nrows ncols cell_size`".into()));
        }
        let nrows: usize = fields[0].parse().map_err(|_| perr(hline, format!("bad nrows `{}`", fields[0])))?;
        let ncols: usize = fields[1].parse().map_err(|_| perr(hline, format!("bad ncols `{}`", fields[1])))?;
        let cell: f64 = fields[2].parse().map_err(|_| perr(hline, format!("bad cell size `{}`", fields[2])))?;
        let mut elevations = Vec::with_capacity(nrows * ncols);
        let mut last = hline;
        for r in 0..nrows {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| perr(last + 1, format!("expected {nrows} rows, found {r}")))?;
            last = ln;
            let before = elevations.len();
            for tok in line.split_whitespace() {
                elevations.push(tok.parse::<f64>().map_err(|_| perr(ln, format!("bad elevation `{tok}`")))?);
            }
            let got = elevations.len() - before;
            if got != ncols {
                return Err(perr(ln, format!("expected {ncols} values, found {got}")));
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing data after the last row".into()));
        }
        Self::new(nrows, ncols, cell, elevations).map_err(|e| perr(hline, format!("{e}")))
    }

    /// Text form read back bit-exactly by [`ElevationGrid::parse`].
    pub fn to_ascii(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {:?}", self.nrows, self.ncols, self.cell_size);
        for i in 0..self.nrows {
            let row: Vec<String> = (0..self.ncols).map(|j| format!("{:?}", self.get(i, j))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    /// Keeps cells `(i r, j r)`; the cell size grows by `r`.
    pub fn downsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(validation("stride must be at least 1"));
        }
        let nr = (self.nrows - 1) / stride + 1;
        let nc = (self.ncols - 1) / stride + 1;
        let mut e = Vec::with_capacity(nr * nc);
        for i in 0..nr {
            for j in 0..nc {
                e.push(self.get(i * stride, j * stride));
            }
        }
        Self::new(nr, nc, self.cell_size * stride as f64, e)
    }

    /// `N x 3` coordinates `(j cell, i cell, z)`, row-major node order.
    pub fn coords(&self) -> Tensor {
        Tensor::from_fn(self.nrows * self.ncols, 3, |n, k| {
            let (i, j) = (n / self.ncols, n % self.ncols);
            match k {
                0 => j as f64 * self.cell_size,
                1 => i as f64 * self.cell_size,
                _ => self.get(i, j),
            }
        })
    }
}

/// Number of edges of the 8-neighbor lattice on an `r x c` grid.
pub fn lattice_edge_count(r: usize, c: usize) -> usize {
    r * (c - 1) + (r - 1) * c + 2 * (r - 1) * (c - 1)
}

/// 8-neighbor grid graph weighted by 3-D edge length, with coordinates
/// attached.
pub fn grid_graph_8nn(grid: &ElevationGrid) -> Result<Graph> {
    let (r, c) = (grid.nrows, grid.ncols);
    let coords = grid.coords();
    let dist = |a: usize, b: usize| {
        let s: f64 = (0..3).map(|k| (coords.get(a, k) - coords.get(b, k)) * (coords.get(a, k) - coords.get(b, k))).sum();
        math::sqrt(s)
    };
    let mut edges = Vec::with_capacity(lattice_edge_count(r, c));
    for i in 0..r {
        for j in 0..c {
            let a = i * c + j;
            let mut push = |ii: usize, jj: usize| {
                let b = ii * c + jj;
                edges.push((a, b, dist(a, b)));
            };
            if j + 1 < c {
                push(i, j + 1);
            }
            if i + 1 < r {
                push(i + 1, j);
                if j + 1 < c {
                    push(i + 1, j + 1);
                }
                if j > 0 {
                    push(i + 1, j - 1);
                }
            }
        }
    }
    from_undirected_edges(r * c, &edges)?.with_coords(coords)
}
