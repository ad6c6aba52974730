use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform 2-D evaluation grid. Cell `(ix, iy)` has index `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub counts: [usize; 2],
}

pub const DEFAULT_CELLS: usize = 128;
pub const DEFAULT_INFLATION: f64 = 0.05;

impl GridSpec {
    pub fn new(lower: [f64; 2], upper: [f64; 2], counts: [usize; 2]) -> Result<Self> {
        let g = Self { lower, upper, counts };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..2 {
            if self.counts[a] < 2 {
                return Err(Error::Config(format!("grid needs >= 2 cells per axis, got {:?}", self.counts)));
            }
            if !(self.lower[a].is_finite() && self.upper[a].is_finite() && self.lower[a] < self.upper[a]) {
                return Err(Error::Config(format!(
                    "grid bounds must be finite and increasing, got {:?}..{:?}",
                    self.lower, self.upper
                )));
            }
        }
        Ok(())
    }

    /// Bounding box of `points` (2-D rows) scaled about its center by
    /// `1 + inflation`.
    pub fn covering(points: &[f64], counts: [usize; 2], inflation: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract("cannot size a grid from zero points".into()));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points.chunks_exact(2) {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut lower = [0.0; 2];
        let mut upper = [0.0; 2];
        for a in 0..2 {
            let c = 0.5 * (lo[a] + hi[a]);
            let half = 0.5 * (hi[a] - lo[a]).max(1e-9) * (1.0 + inflation);
            lower[a] = c - half;
            upper[a] = c + half;
        }
        Self::new(lower, upper, counts)
    }

    pub fn n_cells(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [0, 1].map(|a| (self.upper[a] - self.lower[a]) / self.counts[a] as f64)
    }

    pub fn cell_area(&self) -> f64 {
        let [w, h] = self.cell_size();
        w * h
    }

    /// Cell containing `p`, or `None` outside the grid. The upper boundary
    /// belongs to the last cell.
    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        let mut idx = [0usize; 2];
        for a in 0..2 {
            if !(p[a] >= self.lower[a] && p[a] <= self.upper[a]) {
                return None;
            }
            let f = (p[a] - self.lower[a]) / (self.upper[a] - self.lower[a]) * self.counts[a] as f64;
            idx[a] = (f as usize).min(self.counts[a] - 1);
        }
        Some(idx[1] * self.counts[0] + idx[0])
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (ix, iy) = (cell % self.counts[0], cell / self.counts[0]);
        let [w, h] = self.cell_size();
        [self.lower[0] + (ix as f64 + 0.5) * w, self.lower[1] + (iy as f64 + 0.5) * h]
    }

    /// Row-major cell centers as 2-D rows.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells()).flat_map(|c| self.cell_center(c)).collect()
    }
}

/// Boolean occupancy over the cells of a grid, at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMask {
    pub grid: GridSpec,
    pub k: usize,
    pub cells: Vec<bool>,
}

impl MembershipMask {
    pub fn empty(grid: GridSpec, k: usize) -> Self {
        let cells = vec![false; grid.n_cells()];
        Self { grid, k, cells }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.grid.cell_area()
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.cells.len() != other.cells.len() {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    /// Binary PGM (P5), 255 for member cells, top row = largest second
    /// coordinate.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let [nx, ny] = self.grid.counts;
        let mut buf = format!("P5\n{nx} {ny}\n255\n").into_bytes();
        for iy in (0..ny).rev() {
            buf.extend(self.cells[iy * nx..(iy + 1) * nx].iter().map(|&c| if c { 255u8 } else { 0 }));
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// CSV of member cells: `ix,iy,x,y` with cell-center coordinates.
    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::from("ix,iy,x,y\n");
        let nx = self.grid.counts[0];
        for (c, _) in self.cells.iter().enumerate().filter(|(_, &m)| m) {
            let [x, y] = self.grid.cell_center(c);
            out.push_str(&format!("{},{},{x},{y}\n", c % nx, c / nx));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Marks every cell visited by at least one of `points` (2-D rows). Points
/// outside the grid are counted; more than 1% of them is an error.
pub fn build_reference_mask(points: &[f64], grid: &GridSpec, k: usize) -> Result<MembershipMask> {
    let mut mask = MembershipMask::empty(grid.clone(), k);
    let total = points.len() / 2;
    let mut outside = 0;
    for p in points.chunks_exact(2) {
        match grid.cell_of(p) {
            Some(c) => mask.cells[c] = true,
            None => outside += 1,
        }
    }
    if outside * 100 > total {
        return Err(Error::GridTooSmall { outside, total });
    }
    Ok(mask)
}

/// Overlap statistics of a predicted against a reference mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty { 1.0 } else { 0.0 }
    } else {
        num as f64 / den as f64
    }
}

pub fn overlap(pred: &MembershipMask, reference: &MembershipMask) -> Result<Overlap> {
    pred.check_same_grid(reference)?;
    let (mut inter, mut union, mut np, mut nr) = (0, 0, 0, 0);
    for (&p, &r) in pred.cells.iter().zip(&reference.cells) {
        inter += (p && r) as usize;
        union += (p || r) as usize;
        np += p as usize;
        nr += r as usize;
    }
    let both_empty = union == 0;
    Ok(Overlap {
        iou: ratio(inter, union, both_empty),
        precision: ratio(inter, np, both_empty),
        recall: ratio(inter, nr, both_empty),
    })
}

/// `(IoU, precision)`; an empty union scores 1 if both masks are empty.
pub fn iou_precision(pred: &MembershipMask, reference: &MembershipMask) -> Result<(f64, f64)> {
    let o = overlap(pred, reference)?;
    Ok((o.iou, o.precision))
}

/// Area of reference cells missing from the prediction.
pub fn missed_area(pred: &MembershipMask, reference: &MembershipMask) -> Result<f64> {
    pred.check_same_grid(reference)?;
    let n = pred.cells.iter().zip(&reference.cells).filter(|(&p, &r)| r && !p).count();
    Ok(n as f64 * pred.grid.cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(n: usize) -> GridSpec {
        GridSpec::new([0.0, 0.0], [1.0, 1.0], [n, n]).unwrap()
    }

    #[test]
    fn single_state_marks_one_cell() {
        let m = build_reference_mask(&[0.5, 0.5], &unit(128), 0).unwrap();
        assert_eq!(m.count(), 1);
        assert_eq!(build_reference_mask(&[], &unit(128), 0).unwrap().count(), 0);
    }

    #[test]
    fn occupancy_of_uniform_points_matches_poisson_rate() {
        let mut rng = stream(3, &[]);
        let pts: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let m = build_reference_mask(&pts, &unit(128), 0).unwrap();
        let frac = m.count() as f64 / (128.0 * 128.0);
        let expect = 1.0 - (-1e4f64 / 16384.0).exp();
        assert!((frac - expect).abs() < 0.02, "{frac} vs {expect}");
    }

    #[test]
    fn too_many_outside_points_is_an_error() {
        let mut pts = vec![0.5; 2 * 99];
        pts.extend([2.0, 2.0]);
        assert!(build_reference_mask(&pts, &unit(8), 0).is_ok());
        pts.extend([2.0, 2.0]);
        assert!(matches!(
            build_reference_mask(&pts, &unit(8), 0),
            Err(Error::GridTooSmall { outside: 2, total: 101 })
        ));
    }

    #[test]
    fn overlap_examples() {
        let g = unit(4);
        let mut a = MembershipMask::empty(g.clone(), 0);
        let mut b = a.clone();
        assert_eq!(iou_precision(&a, &b).unwrap(), (1.0, 1.0));
        a.cells[0] = true;
        a.cells[1] = true;
        b.cells[1] = true;
        b.cells[2] = true;
        assert_eq!(iou_precision(&a, &b).unwrap(), (1.0 / 3.0, 0.5));
        assert_eq!(iou_precision(&a, &a).unwrap(), (1.0, 1.0));
        let mut c = MembershipMask::empty(g.clone(), 0);
        c.cells[5] = true;
        assert_eq!(iou_precision(&a, &c).unwrap(), (0.0, 0.0));
        assert_eq!(iou_precision(&MembershipMask::empty(g, 0), &c).unwrap().0, 0.0);
        assert!(matches!(iou_precision(&a, &MembershipMask::empty(unit(5), 0)), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn covering_grid_contains_its_points() {
        let pts = [-1.0, 2.0, 3.0, 5.0, 0.0, 4.0];
        let g = GridSpec::covering(&pts, [16, 16], 0.05).unwrap();
        for p in pts.chunks(2) {
            assert!(g.cell_of(p).is_some());
        }
        assert!((g.upper[0] - g.lower[0] - 4.2).abs() < 1e-12);
        assert_eq!(g.cell_of(&[g.upper[0], g.upper[1]]), Some(g.n_cells() - 1));
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MembershipMask::empty(GridSpec::new([0.0, 0.0], [1.0, 1.0], [3, 2]).unwrap(), 0);
        m.cells[0] = true;
        let p = dir.path().join("m.pgm");
        m.write_pgm(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 255, 0, 0]);
    }

    proptest! {
        #[test]
        fn iou_bounded_by_precision_and_recall(a in proptest::collection::vec(any::<bool>(), 16), b in proptest::collection::vec(any::<bool>(), 16)) {
            let g = unit(4);
            let pa = MembershipMask { grid: g.clone(), k: 0, cells: a };
            let pb = MembershipMask { grid: g, k: 0, cells: b };
            let o = overlap(&pa, &pb).unwrap();
            prop_assert!(o.iou <= o.precision.min(o.recall) + 1e-15);
        }

        #[test]
        fn adding_states_never_clears_cells(n in 1usize..50, extra in 1usize..50, seed in 0u64..1000) {
            let mut rng = stream(seed, &[]);
            let pts: Vec<f64> = (0..2 * (n + extra)).map(|_| rng.random::<f64>()).collect();
            let small = build_reference_mask(&pts[..2 * n], &unit(8), 0).unwrap();
            let big = build_reference_mask(&pts, &unit(8), 0).unwrap();
            prop_assert!(small.cells.iter().zip(&big.cells).all(|(&s, &b)| !s || b));
        }
    }
}
