use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const NONE: usize = usize::MAX;

/// A 2D occupancy grid; `true` cells are blocked.
///
/// Cell `(col, row)` covers `[origin.x + col·size, +size) × [origin.y +
/// row·size, +size)`. Geodesics move between cell centers with 8-connected
/// steps costing `size` (straight) or `size·√2` (diagonal); a diagonal step
/// is only allowed when both orthogonal cells it passes between are free.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    cell_size: f64,
    origin: [f64; 2],
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl OccupancyGrid {
    pub fn new(
        cell_size: f64,
        origin: [f64; 2],
        width: usize,
        height: usize,
        blocked: Vec<bool>,
    ) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Domain(format!("cell size must be positive, got {cell_size}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Domain("grid must be non-empty".into()));
        }
        if blocked.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: blocked.len(),
            });
        }
        Ok(Self {
            cell_size,
            origin,
            width,
            height,
            blocked,
        })
    }

    /// A grid with every cell free.
    pub fn open(cell_size: f64, origin: [f64; 2], width: usize, height: usize) -> Result<Self> {
        Self::new(cell_size, origin, width, height, vec![false; width * height])
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.blocked.len()
    }

    pub fn free_cell_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    fn idx(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn is_blocked(&self, col: usize, row: usize) -> bool {
        self.blocked[self.idx(col, row)]
    }

    pub fn set_blocked(&mut self, col: usize, row: usize, blocked: bool) {
        let i = self.idx(col, row);
        self.blocked[i] = blocked;
    }

    /// The cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let gx = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let gy = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            return None;
        }
        Some((gx as usize, gy as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn is_free_point(&self, p: [f64; 2]) -> bool {
        matches!(self.cell_of(p), Some((c, r)) if !self.is_blocked(c, r))
    }

    fn free_cell_index(&self, p: [f64; 2]) -> Result<usize> {
        match self.cell_of(p) {
            None => Err(Error::Domain(format!("point ({}, {}) is outside the grid", p[0], p[1]))),
            Some((c, r)) if self.is_blocked(c, r) => Err(Error::Domain(format!(
                "point ({}, {}) lies in a blocked cell",
                p[0], p[1]
            ))),
            Some((c, r)) => Ok(self.idx(c, r)),
        }
    }

    fn for_each_move(&self, cell: usize, mut f: impl FnMut(usize, f64)) {
        let (col, row) = ((cell % self.width) as isize, (cell / self.width) as isize);
        let diag = self.cell_size * std::f64::consts::SQRT_2;
        let free = |c: isize, r: isize| {
            c >= 0
                && r >= 0
                && (c as usize) < self.width
                && (r as usize) < self.height
                && !self.blocked[r as usize * self.width + c as usize]
        };
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (c, r) = (col + dc, row + dr);
                if !free(c, r) {
                    continue;
                }
                if dr != 0 && dc != 0 {
                    if !free(col + dc, row) || !free(col, row + dr) {
                        continue;
                    }
                    f(r as usize * self.width + c as usize, diag);
                } else {
                    f(r as usize * self.width + c as usize, self.cell_size);
                }
            }
        }
    }

    fn run_dijkstra(&self, sources: &[usize], target: Option<usize>) -> DistanceField {
        let mut dist = vec![f64::INFINITY; self.blocked.len()];
        let mut pred = vec![NONE; self.blocked.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, cell: s });
        }
        while let Some(Entry { dist: d, cell }) = heap.pop() {
            if d > dist[cell] {
                continue;
            }
            if Some(cell) == target {
                break;
            }
            self.for_each_move(cell, |next, w| {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    pred[next] = cell;
                    heap.push(Entry { dist: nd, cell: next });
                }
            });
        }
        DistanceField {
            width: self.width,
            cell_size: self.cell_size,
            origin: self.origin,
            height: self.height,
            dist,
            pred,
        }
    }

    /// Shortest obstacle-avoiding distance between the cells containing `a`
    /// and `b`. `Ok(None)` means no free path exists.
    pub fn geodesic_distance(&self, a: [f64; 2], b: [f64; 2]) -> Result<Option<f64>> {
        let (sa, sb) = (self.free_cell_index(a)?, self.free_cell_index(b)?);
        let field = self.run_dijkstra(&[sa], Some(sb));
        let d = field.dist[sb];
        Ok(d.is_finite().then_some(d))
    }

    /// Distances from the cell containing `source` to every cell.
    pub fn distance_field(&self, source: [f64; 2]) -> Result<DistanceField> {
        let s = self.free_cell_index(source)?;
        Ok(self.run_dijkstra(&[s], None))
    }

    /// Distances from the nearest of several sources.
    pub fn distance_field_multi(&self, sources: &[[f64; 2]]) -> Result<DistanceField> {
        let cells = sources
            .iter()
            .map(|&p| self.free_cell_index(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.run_dijkstra(&cells, None))
    }

    /// True when every cell touched by the segment `a`–`b` is free.
    ///
    /// Walks the exact cell sequence of the segment; when it crosses a grid
    /// vertex both side cells are checked.
    pub fn line_of_sight(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let (Some((mut cx, mut cy)), Some((ex, ey))) = (self.cell_of(a), self.cell_of(b)) else {
            return false;
        };
        if self.is_blocked(cx, cy) || self.is_blocked(ex, ey) {
            return false;
        }
        let gx = (a[0] - self.origin[0]) / self.cell_size;
        let gy = (a[1] - self.origin[1]) / self.cell_size;
        let dx = (b[0] - a[0]) / self.cell_size;
        let dy = (b[1] - a[1]) / self.cell_size;
        let step_x: isize = if ex > cx { 1 } else if ex < cx { -1 } else { 0 };
        let step_y: isize = if ey > cy { 1 } else if ey < cy { -1 } else { 0 };
        let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut t_max_x = match step_x {
            1 => (cx as f64 + 1.0 - gx) * t_delta_x,
            -1 => (gx - cx as f64) * t_delta_x,
            _ => f64::INFINITY,
        };
        let mut t_max_y = match step_y {
            1 => (cy as f64 + 1.0 - gy) * t_delta_y,
            -1 => (gy - cy as f64) * t_delta_y,
            _ => f64::INFINITY,
        };
        let mut remaining = cx.abs_diff(ex) + cy.abs_diff(ey);
        while remaining > 0 {
            let nx = (cx as isize + step_x) as usize;
            let ny = (cy as isize + step_y) as usize;
            if step_x != 0 && step_y != 0 && t_max_x == t_max_y && remaining >= 2 {
                if self.is_blocked(nx, cy) || self.is_blocked(cx, ny) {
                    return false;
                }
                cx = nx;
                cy = ny;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
                remaining -= 2;
            } else if step_x != 0 && (t_max_x < t_max_y || step_y == 0 || cy == ey) && cx != ex {
                cx = nx;
                t_max_x += t_delta_x;
                remaining -= 1;
            } else {
                cy = ny;
                t_max_y += t_delta_y;
                remaining -= 1;
            }
            if self.is_blocked(cx, cy) {
                return false;
            }
        }
        true
    }

    /// Labels 8-connected free components (with the same corner rule as
    /// geodesics). Blocked cells get `usize::MAX`.
    pub fn free_components(&self) -> Vec<usize> {
        let mut label = vec![NONE; self.blocked.len()];
        let mut next = 0;
        for start in 0..self.blocked.len() {
            if self.blocked[start] || label[start] != NONE {
                continue;
            }
            label[start] = next;
            let mut stack = vec![start];
            while let Some(cell) = stack.pop() {
                self.for_each_move(cell, |n, _| {
                    if label[n] == NONE {
                        label[n] = next;
                        stack.push(n);
                    }
                });
            }
            next += 1;
        }
        label
    }

    pub fn to_document(&self) -> GridDocument {
        let rows = (0..self.height)
            .map(|r| {
                (0..self.width)
                    .map(|c| if self.is_blocked(c, r) { '1' } else { '0' })
                    .collect()
            })
            .collect();
        GridDocument {
            cell_size: self.cell_size,
            origin: self.origin,
            rows,
        }
    }

    pub fn from_document(doc: &GridDocument) -> Result<Self> {
        let height = doc.rows.len();
        let width = doc.rows.first().map_or(0, |r| r.len());
        let mut blocked = Vec::with_capacity(width * height);
        for (r, row) in doc.rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Format(format!("grid row {r} has length {} (expected {width})", row.len())));
            }
            for ch in row.chars() {
                blocked.push(match ch {
                    '0' => false,
                    '1' => true,
                    other => return Err(Error::Format(format!("unexpected grid character {other:?}"))),
                });
            }
        }
        Self::new(doc.cell_size, doc.origin, width, height, blocked)
    }
}

/// On-disk grid: rows listed by ascending row index (y), one `0`/`1`
/// character per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub rows: Vec<String>,
}

/// Result of a grid Dijkstra run: distances and predecessors per cell.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    cell_size: f64,
    origin: [f64; 2],
    dist: Vec<f64>,
    pred: Vec<usize>,
}

impl DistanceField {
    pub fn at_cell(&self, col: usize, row: usize) -> Option<f64> {
        let d = self.dist[row * self.width + col];
        d.is_finite().then_some(d)
    }

    /// Distance to the cell containing `p`; `None` when outside the grid or
    /// unreachable.
    pub fn at(&self, p: [f64; 2]) -> Option<f64> {
        let gx = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let gy = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            return None;
        }
        self.at_cell(gx as usize, gy as usize)
    }

    /// Cells from a source to `(col, row)` inclusive, or `None` if
    /// unreachable.
    pub fn path_to(&self, col: usize, row: usize) -> Option<Vec<(usize, usize)>> {
        let mut cell = row * self.width + col;
        if !self.dist[cell].is_finite() {
            return None;
        }
        let mut cells = vec![(col, row)];
        while self.pred[cell] != NONE {
            cell = self.pred[cell];
            cells.push((cell % self.width, cell / self.width));
        }
        cells.reverse();
        Some(cells)
    }
}
