//! Uniform grid quantization of boxes and the abstraction error bound.
//!
//! Cells are half-open `[lo + iδ, lo + (i+1)δ)` per dimension; the top edge of
//! the box belongs to the last cell. Points outside the box map to the sink
//! cell, which has no representative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cell {
    Inside(usize),
    Sink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    width: Vec<f64>,
    counts: Vec<usize>,
    adjusted: bool,
}

const FIT_TOL: f64 = 1e-9;

impl Grid {
    /// Grid over the box `[lo, hi]` with the requested cell width per
    /// dimension. A width that does not divide the side is re-derived from the
    /// rounded cell count; [`Grid::width_adjusted`] reports when that happened.
    pub fn new(lo: &[f64], hi: &[f64], width: &[f64]) -> Result<Self> {
        let n = lo.len();
        if n == 0 || hi.len() != n || width.len() != n {
            return Err(Error::config(
                "grid bounds and widths must have the same nonzero length",
            ));
        }
        let mut counts = Vec::with_capacity(n);
        let mut widths = Vec::with_capacity(n);
        let mut adjusted = false;
        for i in 0..n {
            let side = hi[i] - lo[i];
            if !(side > 0.0) || !side.is_finite() {
                return Err(Error::config(format!(
                    "grid dimension {i} has an empty side"
                )));
            }
            if !(width[i] > 0.0) || !width[i].is_finite() {
                return Err(Error::config(format!(
                    "grid width in dimension {i} must be positive"
                )));
            }
            let ratio = side / width[i];
            let count = libm::round(ratio).max(1.0);
            if (ratio - count).abs() > FIT_TOL * count.max(1.0) {
                adjusted = true;
            }
            counts.push(count as usize);
            widths.push(side / count);
        }
        Ok(Grid {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            width: widths,
            counts,
            adjusted,
        })
    }

    pub fn uniform(lo: &[f64], hi: &[f64], width: f64) -> Result<Self> {
        Self::new(lo, hi, &vec![width; lo.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn width(&self) -> &[f64] {
        &self.width
    }
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
    pub fn width_adjusted(&self) -> bool {
        self.adjusted
    }
    /// Largest cell width; the discretization parameter used in the error bound.
    pub fn max_width(&self) -> f64 {
        self.width.iter().copied().fold(0.0, f64::max)
    }

    /// Number of in-box cells.
    pub fn n_cells(&self) -> usize {
        self.counts.iter().product()
    }

    /// Dense index of a cell; the sink takes the slot after the last cell.
    #[inline]
    pub fn slot(&self, cell: Cell) -> usize {
        match cell {
            Cell::Inside(i) => i,
            Cell::Sink => self.n_cells(),
        }
    }

    #[inline]
    pub fn cell_at_slot(&self, slot: usize) -> Cell {
        if slot >= self.n_cells() {
            Cell::Sink
        } else {
            Cell::Inside(slot)
        }
    }

    /// Lebesgue measure of the box.
    pub fn lebesgue(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    #[inline]
    fn axis_index(&self, d: usize, x: f64) -> Option<usize> {
        if x < self.lo[d] || x > self.hi[d] {
            return None;
        }
        let i = libm::floor((x - self.lo[d]) / self.width[d]);
        Some((i as usize).min(self.counts[d] - 1))
    }

    pub fn quantize(&self, x: &[f64]) -> Result<Cell> {
        if x.len() != self.dim() {
            return Err(Error::input(format!(
                "point has dimension {}, grid has {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::input("NaN coordinate"));
        }
        Ok(self.quantize_unchecked(x))
    }

    /// Quantization without dimension or NaN checks (NaN maps to the sink).
    #[inline]
    pub fn quantize_unchecked(&self, x: &[f64]) -> Cell {
        let mut flat = 0;
        for d in (0..self.dim()).rev() {
            match self.axis_index(d, x[d]) {
                Some(i) => flat = flat * self.counts[d] + i,
                None => return Cell::Sink,
            }
        }
        Cell::Inside(flat)
    }

    /// Per-dimension indices of an in-box cell (dimension 0 varies fastest).
    pub fn axis_indices(&self, mut flat: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&c| {
                let i = flat % c;
                flat /= c;
                i
            })
            .collect()
    }

    pub fn representative(&self, cell: Cell) -> Result<Vec<f64>> {
        match cell {
            Cell::Sink => Err(Error::input("the sink cell has no representative")),
            Cell::Inside(i) if i >= self.n_cells() => {
                Err(Error::input(format!("cell {i} out of range")))
            }
            Cell::Inside(i) => {
                let mut out = vec![0.0; self.dim()];
                self.representative_into(i, &mut out);
                Ok(out)
            }
        }
    }

    #[inline]
    pub fn representative_into(&self, mut flat: usize, out: &mut [f64]) {
        for d in 0..self.dim() {
            let i = flat % self.counts[d];
            flat /= self.counts[d];
            out[d] = self.lo[d] + (i as f64 + 0.5) * self.width[d];
        }
    }

    /// Lower and upper edge of an in-box cell along dimension `d`.
    pub fn cell_bounds(&self, flat: usize, d: usize) -> (f64, f64) {
        let i = self.axis_indices(flat)[d];
        let lo = self.lo[d] + i as f64 * self.width[d];
        let hi = if i + 1 == self.counts[d] {
            self.hi[d]
        } else {
            lo + self.width[d]
        };
        (lo, hi)
    }

    fn fitted_widths(&self, factor: usize, finer: bool) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let c = if finer {
                    self.counts[i] * factor
                } else {
                    self.counts[i] / factor
                };
                (self.hi[i] - self.lo[i]) / c as f64
            })
            .collect()
    }

    /// Same box with every cell split `factor` ways per dimension.
    pub fn refine(&self, factor: usize) -> Result<Grid> {
        if factor < 2 {
            return Err(Error::config("refinement factor must be at least 2"));
        }
        Ok(Grid {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            width: self.fitted_widths(factor, true),
            counts: self.counts.iter().map(|c| c * factor).collect(),
            adjusted: self.adjusted,
        })
    }

    /// Inverse of [`Grid::refine`]; every count must be divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::config("coarsening factor must be positive"));
        }
        if self.counts.iter().any(|c| c % factor != 0) {
            return Err(Error::config(format!(
                "cell counts {:?} are not divisible by {factor}",
                self.counts
            )));
        }
        Ok(Grid {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            width: self.fitted_widths(factor, false),
            counts: self.counts.iter().map(|c| c / factor).collect(),
            adjusted: self.adjusted,
        })
    }
}

/// How the adversary's internal-input actions are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InternalGridMode {
    /// Cartesian product of per-channel grids.
    Cartesian,
    /// A single grid over the sum of all channels; each channel receives an
    /// equal share of the chosen sum.
    PerAxisSum,
}

/// Finite action set of the adversary: quantized internal inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid {
    mode: InternalGridMode,
    channels: usize,
    grid: Option<Grid>,
    points: Vec<f64>,
}

impl InputGrid {
    /// `lo`/`hi` bound each internal channel; `width` is the cell width of a
    /// channel (Cartesian) or of the channel sum (per-axis sum). Degenerate
    /// channels (`lo == hi`) and systems without internal inputs give a single
    /// action.
    pub fn new(lo: &[f64], hi: &[f64], width: f64, mode: InternalGridMode) -> Result<Self> {
        let channels = lo.len();
        if hi.len() != channels {
            return Err(Error::config(
                "internal-input bounds must have matching lengths",
            ));
        }
        let degenerate = channels == 0 || lo.iter().zip(hi).all(|(l, h)| l == h);
        let grid = if degenerate {
            None
        } else {
            match mode {
                InternalGridMode::Cartesian => Some(Grid::uniform(lo, hi, width)?),
                InternalGridMode::PerAxisSum => {
                    let s_lo: f64 = lo.iter().sum();
                    let s_hi: f64 = hi.iter().sum();
                    Some(Grid::uniform(&[s_lo], &[s_hi], width)?)
                }
            }
        };
        let mut ig = InputGrid {
            mode,
            channels,
            grid,
            points: Vec::new(),
        };
        let n = ig.n_actions();
        let mut points = vec![0.0; n * channels];
        for a in 0..n {
            ig.point_into(a, lo, &mut points[a * channels..(a + 1) * channels]);
        }
        ig.points = points;
        Ok(ig)
    }

    fn point_into(&self, action: usize, lo: &[f64], out: &mut [f64]) {
        match (&self.grid, self.mode) {
            (None, _) => out.copy_from_slice(lo),
            (Some(g), InternalGridMode::Cartesian) => g.representative_into(action, out),
            (Some(g), InternalGridMode::PerAxisSum) => {
                let mut s = [0.0];
                g.representative_into(action, &mut s);
                let share = s[0] / self.channels as f64;
                out.iter_mut().for_each(|o| *o = share);
            }
        }
    }

    pub fn mode(&self) -> InternalGridMode {
        self.mode
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }
    pub fn n_actions(&self) -> usize {
        self.grid.as_ref().map_or(1, Grid::n_cells)
    }
    /// Cell width of the action grid, zero when there is a single action.
    pub fn width(&self) -> f64 {
        self.grid.as_ref().map_or(0.0, Grid::max_width)
    }

    /// Internal-input vector played by `action`.
    #[inline]
    pub fn point(&self, action: usize) -> &[f64] {
        &self.points[action * self.channels..(action + 1) * self.channels]
    }

    /// Action of `self` whose cell contains the point played by `action` in
    /// `finer`.
    pub fn nearest_action(&self, finer: &InputGrid, action: usize) -> usize {
        match (&self.grid, &finer.grid) {
            (Some(coarse), Some(fine)) => {
                let mut p = vec![0.0; fine.dim()];
                fine.representative_into(action, &mut p);
                match coarse.quantize_unchecked(&p) {
                    Cell::Inside(i) => i,
                    Cell::Sink => 0,
                }
            }
            _ => 0,
        }
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        Ok(InputGrid {
            grid: self.grid.as_ref().map(|g| g.coarsen(factor)).transpose()?,
            ..self.clone()
        }
        .with_points())
    }

    fn with_points(mut self) -> Self {
        let n = self.n_actions();
        let mut points = vec![0.0; n * self.channels];
        let lo = self.points[..self.channels].to_vec();
        for a in 0..n {
            self.point_into(
                a,
                &lo,
                &mut points[a * self.channels..(a + 1) * self.channels],
            );
        }
        self.points = points;
        self
    }
}

/// Satisfaction-probability gap between a subsystem and its grid abstraction:
/// `horizon · lebesgue · (δ·H_x + μ·H_w)`.
pub fn abstraction_error(
    horizon: usize,
    lebesgue: f64,
    delta: f64,
    h_x: f64,
    mu: f64,
    h_w: f64,
) -> f64 {
    horizon as f64 * lebesgue * (delta * h_x + mu * h_w)
}
