//! Nearest-neighbor queries between point sets.
//!
//! Exhaustive scan for small targets, a uniform-grid spatial hash above
//! [`GRID_THRESHOLD`] points. Both backends return identical results,
//! including the lowest-index tie rule.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Target sizes below this use the exhaustive scan.
pub const GRID_THRESHOLD: usize = 4096;

/// Index of the closest point in the other cloud and the squared Euclidean
/// distance to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestResult {
    pub index: usize,
    pub squared_distance: f64,
}

/// For each query point, the nearest point in `target` (ties broken by the
/// lowest target index).
pub fn nearest_neighbors(
    query: &[Point3<f64>],
    target: &[Point3<f64>],
) -> Result<Vec<NearestResult>> {
    if query.is_empty() || target.is_empty() {
        return Err(Error::invalid("nearest-neighbor query on an empty cloud"));
    }
    if target.len() < GRID_THRESHOLD {
        Ok(query
            .par_iter()
            .map(|q| nearest_exhaustive(q, target))
            .collect())
    } else {
        let grid = UniformGrid::build(target);
        Ok(query.par_iter().map(|q| grid.nearest(q, target)).collect())
    }
}

fn nearest_exhaustive(q: &Point3<f64>, target: &[Point3<f64>]) -> NearestResult {
    let mut best = NearestResult {
        index: 0,
        squared_distance: f64::INFINITY,
    };
    for (j, t) in target.iter().enumerate() {
        let d2 = (q - t).norm_squared();
        if d2 < best.squared_distance {
            best = NearestResult {
                index: j,
                squared_distance: d2,
            };
        }
    }
    best
}

/// Uniform spatial hash over the target bounding box.
struct UniformGrid {
    lo: Point3<f64>,
    side: [f64; 3],
    dims: [i64; 3],
    /// point indices per cell, ascending so the tie rule falls out of scan order
    cells: Vec<Vec<u32>>,
    min_sep_side: f64,
}

impl UniformGrid {
    fn build(target: &[Point3<f64>]) -> Self {
        let mut lo = target[0];
        let mut hi = target[0];
        for p in target {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        // aim for ~2 points per cell
        let per_axis = ((target.len() as f64 / 2.0).cbrt().ceil() as i64).max(1);
        let mut dims = [1i64; 3];
        let mut side = [0.0f64; 3];
        for k in 0..3 {
            let ext = hi[k] - lo[k];
            if ext > 0.0 {
                dims[k] = per_axis;
                side[k] = ext / per_axis as f64;
            } else {
                dims[k] = 1;
                side[k] = 0.0;
            }
        }
        // only axes with more than one cell can separate points
        let min_sep_side = (0..3)
            .filter(|&k| dims[k] > 1)
            .map(|k| side[k])
            .fold(f64::INFINITY, f64::min);

        let mut g = Self {
            lo,
            side,
            dims,
            cells: vec![Vec::new(); (dims[0] * dims[1] * dims[2]) as usize],
            min_sep_side,
        };
        for (i, p) in target.iter().enumerate() {
            let c = grid_cell_clamped(&g, p);
            let flat = grid_flat(&g, c);
            g.cells[flat].push(i as u32);
        }
        g
    }

    fn nearest(&self, q: &Point3<f64>, target: &[Point3<f64>]) -> NearestResult {
        let home = grid_cell_virtual(self, q);
        let mut best = NearestResult {
            index: usize::MAX,
            squared_distance: f64::INFINITY,
        };
        // rings up to this radius cover every valid cell from `home`
        let max_ring = (0..3)
            .map(|k| home[k].abs().max((self.dims[k] - 1 - home[k]).abs()))
            .max()
            .unwrap_or(0);
        for ring in 0..=max_ring {
            // points in cells at Chebyshev distance `ring` are at least
            // (ring - 1) * min_sep_side away; the non-strict comparison keeps
            // scanning while an equally distant lower-index point may appear
            if ring > 0 && best.index != usize::MAX && self.min_sep_side.is_finite() {
                let bound = (ring - 1) as f64 * self.min_sep_side;
                if bound * bound > best.squared_distance {
                    break;
                }
            }
            self.for_ring_cells(home, ring, |flat| {
                for &i in &self.cells[flat] {
                    let i = i as usize;
                    let d2 = (q - target[i]).norm_squared();
                    if d2 < best.squared_distance
                        || (d2 == best.squared_distance && i < best.index)
                    {
                        best = NearestResult {
                            index: i,
                            squared_distance: d2,
                        };
                    }
                }
            });
        }
        best
    }

    /// Visit valid cells whose Chebyshev distance from `home` equals `ring`,
    /// in a fixed deterministic order.
    fn for_ring_cells(&self, home: [i64; 3], ring: i64, mut f: impl FnMut(usize)) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    let c = [home[0] + dx, home[1] + dy, home[2] + dz];
                    if (0..3).all(|k| c[k] >= 0 && c[k] < self.dims[k]) {
                        f(grid_flat(self, c));
                    }
                }
            }
        }
    }
}

fn grid_cell_virtual(g: &UniformGrid, p: &Point3<f64>) -> [i64; 3] {
    let mut c = [0i64; 3];
    for k in 0..3 {
        c[k] = if g.side[k] > 0.0 {
            (((p[k] - g.lo[k]) / g.side[k]).floor() as i64).clamp(-1 << 30, 1 << 30)
        } else {
            0
        };
    }
    c
}

fn grid_cell_clamped(g: &UniformGrid, p: &Point3<f64>) -> [i64; 3] {
    let mut c = grid_cell_virtual(g, p);
    for k in 0..3 {
        c[k] = c[k].clamp(0, g.dims[k] - 1);
    }
    c
}

fn grid_flat(g: &UniformGrid, c: [i64; 3]) -> usize {
    (c[0] + g.dims[0] * (c[1] + g.dims[1] * c[2])) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(q: &Point3<f64>, target: &[Point3<f64>]) -> NearestResult {
        let mut best = NearestResult {
            index: 0,
            squared_distance: f64::INFINITY,
        };
        for (j, t) in target.iter().enumerate() {
            let d2 = (q - t).norm_squared();
            if d2 < best.squared_distance {
                best = NearestResult {
                    index: j,
                    squared_distance: d2,
                };
            }
        }
        best
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen::<f64>() * scale,
                    rng.gen::<f64>() * scale,
                    rng.gen::<f64>() * scale,
                )
            })
            .collect()
    }

    #[test]
    fn simple_case() {
        let q = vec![Point3::new(0.0, 0.0, 0.0)];
        let t = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        let r = nearest_neighbors(&q, &t).unwrap();
        assert_eq!(r[0].index, 0);
        assert!((r[0].squared_distance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tie_broken_by_lowest_index() {
        let q = vec![Point3::new(0.0, 0.0, 0.0)];
        let mut t = vec![Point3::new(9.0, 0.0, 0.0); 10];
        t[3] = Point3::new(1.0, 0.0, 0.0);
        t[7] = Point3::new(-1.0, 0.0, 0.0);
        let r = nearest_neighbors(&q, &t).unwrap();
        assert_eq!(r[0].index, 3);
    }

    #[test]
    fn self_query_maps_to_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 60, 1.0);
        let r = nearest_neighbors(&pts, &pts).unwrap();
        for (i, nr) in r.iter().enumerate() {
            assert_eq!(nr.index, i);
            assert_eq!(nr.squared_distance, 0.0);
        }
    }

    #[test]
    fn brute_force_agreement_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..40 {
            let nq = rng.gen_range(1..50);
            let nt = rng.gen_range(1..50);
            let q = random_points(&mut rng, nq, 2.0);
            let t = random_points(&mut rng, nt, 2.0);
            let got = nearest_neighbors(&q, &t).unwrap();
            for (i, g) in got.iter().enumerate() {
                let want = brute(&q[i], &t);
                assert_eq!(g.index, want.index);
                assert_eq!(g.squared_distance, want.squared_distance);
            }
        }
    }

    #[test]
    fn grid_backend_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_points(&mut rng, GRID_THRESHOLD + 500, 3.0);
        // queries inside and far outside the target box
        let mut q = random_points(&mut rng, 200, 3.0);
        q.extend(random_points(&mut rng, 50, 1.0).iter().map(|p| {
            Point3::new(p.x + 10.0, p.y - 7.0, p.z * 0.5)
        }));
        let got = nearest_neighbors(&q, &t).unwrap();
        for (i, g) in got.iter().enumerate() {
            let want = brute(&q[i], &t);
            assert_eq!(g.index, want.index, "query {i}");
            assert_eq!(g.squared_distance, want.squared_distance, "query {i}");
        }
    }

    #[test]
    fn grid_with_duplicates_keeps_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut t = random_points(&mut rng, GRID_THRESHOLD, 1.0);
        // duplicate an early point late in the list
        let dup = t[10];
        t.push(dup);
        let q = vec![dup];
        let r = nearest_neighbors(&q, &t).unwrap();
        assert_eq!(r[0].index, 10);
    }

    #[test]
    fn empty_cloud_errors() {
        let p = vec![Point3::origin()];
        assert!(nearest_neighbors(&p, &[]).is_err());
        assert!(nearest_neighbors(&[], &p).is_err());
    }
}
