use crate::error::{Error, Result};

use super::streamline::Streamline;

/// Below this many target points a linear scan is used instead of the grid.
const BRUTE_FORCE_LIMIT: usize = 64;

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Uniform-cell bucket index for exact nearest-neighbour queries.
struct PointGrid<'a> {
    points: &'a [[f64; 3]],
    lo: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        // about two points per cell along a typical curve-like distribution
        let per_axis = ((points.len() as f64).cbrt() * 2.0).clamp(1.0, 128.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims: [usize; 3] = std::array::from_fn(|a| ((hi[a] - lo[a]) / cell) as usize + 1);
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = PointGrid {
            points,
            lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (i, &p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            buckets[grid.flat(c)].push(i as u32);
        }
        grid.buckets = buckets;
        grid
    }

    fn cell_of(&self, p: [f64; 3]) -> [usize; 3] {
        std::array::from_fn(|a| {
            let u = ((p[a] - self.lo[a]) / self.cell).floor();
            if u <= 0.0 {
                0
            } else {
                (u as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    fn nearest_sq(&self, q: [f64; 3]) -> f64 {
        let c = self.cell_of(q);
        let max_r = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = f64::INFINITY;
        for r in 0..=max_r {
            self.scan_shell(c, r, q, &mut best);
            // every cell beyond the shell lies at least r cells away on some axis
            let bound = r as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best
    }

    fn scan_shell(&self, c: [usize; 3], r: usize, q: [f64; 3], best: &mut f64) {
        let ri = r as isize;
        let range = |a: usize| {
            let lo = (c[a] as isize - ri).max(0);
            let hi = (c[a] as isize + ri).min(self.dims[a] as isize - 1);
            lo..=hi
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let on_shell = (x - c[0] as isize).abs() == ri
                        || (y - c[1] as isize).abs() == ri
                        || (z - c[2] as isize).abs() == ri;
                    if !on_shell {
                        continue;
                    }
                    let b = &self.buckets[self.flat([x as usize, y as usize, z as usize])];
                    for &i in b {
                        let d = sq_dist(q, self.points[i as usize]);
                        if d < *best {
                            *best = d;
                        }
                    }
                }
            }
        }
    }
}

fn brute_nearest_sq(q: [f64; 3], pts: &[[f64; 3]]) -> f64 {
    pts.iter().map(|&p| sq_dist(q, p)).fold(f64::INFINITY, f64::min)
}

fn mean_nearest(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let sum: f64 = if to.len() < BRUTE_FORCE_LIMIT {
        from.iter().map(|&q| brute_nearest_sq(q, to)).sum()
    } else {
        let grid = PointGrid::new(to);
        from.iter().map(|&q| grid.nearest_sq(q)).sum()
    };
    sum / from.len() as f64
}

/// Symmetric Chamfer distance between two point sets: the mean squared
/// nearest-neighbour distance from each set to the other, summed.
pub fn chamfer_points(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Chamfer distance between the flattened point sets of two streamline pools.
pub fn chamfer(a: &[Streamline], b: &[Streamline]) -> Result<f64> {
    let flat = |s: &[Streamline]| s.iter().flat_map(|l| l.points.iter().copied()).collect::<Vec<_>>();
    chamfer_points(&flat(a), &flat(b))
}
