use std::cmp::Ordering;

use rayon::prelude::*;

use super::cloud::{dist2, Point3};
use crate::error::{Error, Result};

/// Per-query neighbor lists stored contiguously.
///
/// Lists are sorted by distance with ties broken by support index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    distances: Vec<f64>,
    support_len: usize,
}

impl NeighborIndex {
    fn from_lists(lists: Vec<Vec<(f64, usize)>>, support_len: usize) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total = lists.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(total);
        let mut distances = Vec::with_capacity(total);
        for list in lists {
            for (d2, i) in list {
                indices.push(i);
                distances.push(d2.sqrt());
            }
            offsets.push(indices.len());
        }
        Self { offsets, indices, distances, support_len }
    }

    /// Builds an index from explicit lists, validating ranges and ordering.
    pub fn from_parts(lists: Vec<Vec<usize>>, distances: Vec<Vec<f64>>, support_len: usize) -> Result<Self> {
        if lists.len() != distances.len() {
            return Err(Error::ShapeMismatch("neighbor lists and distances differ in length".into()));
        }
        let mut offsets = vec![0];
        let mut idx = Vec::new();
        let mut dist = Vec::new();
        for (l, d) in lists.into_iter().zip(distances) {
            if l.len() != d.len() {
                return Err(Error::ShapeMismatch("neighbor list and distance list differ".into()));
            }
            if let Some(&bad) = l.iter().find(|&&i| i >= support_len) {
                return Err(Error::IndexOutOfRange { index: bad, len: support_len });
            }
            if d.windows(2).any(|w| !(w[0] <= w[1])) || d.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidArgument("distances must be non-negative and sorted".into()));
            }
            idx.extend(l);
            dist.extend(d);
            offsets.push(idx.len());
        }
        Ok(Self { offsets, indices: idx, distances: dist, support_len })
    }

    pub fn query_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn support_len(&self) -> usize {
        self.support_len
    }

    pub fn neighbors(&self, query: usize) -> &[usize] {
        &self.indices[self.offsets[query]..self.offsets[query + 1]]
    }

    pub fn distances(&self, query: usize) -> &[f64] {
        &self.distances[self.offsets[query]..self.offsets[query + 1]]
    }

    /// `Some(k)` when every query has exactly `k` neighbors.
    pub fn uniform_len(&self) -> Option<usize> {
        let k = self.offsets.get(1).copied()?;
        self.offsets.windows(2).all(|w| w[1] - w[0] == k).then_some(k)
    }

    /// Row-major `[queries * k]` indices; errors on ragged lists.
    pub fn flat_indices(&self) -> Result<&[usize]> {
        self.uniform_len()
            .map(|_| self.indices.as_slice())
            .ok_or_else(|| Error::ShapeMismatch("ragged neighbor lists".into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], &[f64])> + '_ {
        (0..self.query_count()).map(move |q| (self.neighbors(q), self.distances(q)))
    }

    /// Resamples every list to exactly `k` entries by repeating from the front,
    /// so ball-query output can feed fixed-size grouping.
    pub fn pad_to(&self, k: usize) -> Self {
        let lists = (0..self.query_count())
            .map(|q| {
                let n = self.neighbors(q);
                let d = self.distances(q);
                (0..k).map(|j| (d[j % n.len()] * d[j % n.len()], n[j % n.len()])).collect::<Vec<_>>()
            })
            .map(|mut l: Vec<(f64, usize)>| {
                l.sort_by(order);
                l
            })
            .collect();
        Self::from_lists(lists, self.support_len)
    }
}

#[inline]
fn order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn k_smallest(mut cand: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand
}

const PARALLEL_WORK: usize = 1 << 16;

fn per_query<F>(queries: &[Point3], support_len: usize, f: F) -> Vec<Vec<(f64, usize)>>
where
    F: Fn(&Point3) -> Vec<(f64, usize)> + Sync,
{
    if queries.len() * support_len >= PARALLEL_WORK {
        queries.par_iter().map(&f).collect()
    } else {
        queries.iter().map(f).collect()
    }
}

/// Exact k nearest neighbors by exhaustive distance evaluation.
pub fn knn(queries: &[Point3], support: &[Point3], k: usize) -> Result<NeighborIndex> {
    validate_knn(queries, support, k)?;
    let lists = per_query(queries, support.len(), |q| {
        let cand = support.iter().enumerate().map(|(i, p)| (dist2(q, p), i)).collect();
        k_smallest(cand, k)
    });
    Ok(NeighborIndex::from_lists(lists, support.len()))
}

fn validate_knn(queries: &[Point3], support: &[Point3], k: usize) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("knn queries"));
    }
    if support.is_empty() {
        return Err(Error::EmptyInput("knn support"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > support.len() {
        return Err(Error::NeighborCountTooLarge { k, support: support.len() });
    }
    Ok(())
}

/// Uniform bucket grid over a support set for exact neighbor search.
#[derive(Clone, Debug)]
pub struct UniformGrid<'a> {
    points: &'a [Point3],
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    entries: Vec<usize>,
}

impl<'a> UniformGrid<'a> {
    /// Picks a cell size giving roughly `per_cell` points per occupied cell.
    pub fn build(points: &'a [Point3], per_cell: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("grid support"));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let volume_cells = (points.len() as f64 / per_cell.max(1) as f64).max(1.0);
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        let mut cell = if max_ext > 0.0 {
            // Surface-like clouds fill roughly a 2-manifold; size cells from the area.
            let area = ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2];
            (area.max(max_ext * max_ext * 1e-6) / volume_cells).sqrt()
        } else {
            1.0
        };
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        // Cap the grid resolution; the search bound needs every point in its true cell.
        cell = cell.max(max_ext / 1000.0);
        let dims = [0, 1, 2].map(|a| (ext[a] / cell).floor() as usize + 1);
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let keys: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = Self::coord_of(&lo, cell, &dims, p);
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut entries = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i;
            fill[k] += 1;
        }
        Ok(Self { points, origin: lo, cell, dims, starts, entries })
    }

    fn coord_of(origin: &Point3, cell: f64, dims: &[usize; 3], p: &Point3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - origin[a]) / cell).floor();
            if c < 0.0 {
                0
            } else {
                (c as usize).min(dims[a] - 1)
            }
        })
    }

    fn cell_coord(&self, p: &Point3) -> [isize; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as isize)
    }

    fn visit_shell(&self, center: [isize; 3], r: isize, mut f: impl FnMut(usize)) {
        let clamp = |v: isize, a: usize| v.clamp(0, self.dims[a] as isize - 1);
        let (x0, x1) = (clamp(center[0] - r, 0), clamp(center[0] + r, 0));
        let (y0, y1) = (clamp(center[1] - r, 1), clamp(center[1] + r, 1));
        let (z0, z1) = (clamp(center[2] - r, 2), clamp(center[2] + r, 2));
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let ring = (x - center[0]).abs().max((y - center[1]).abs()).max((z - center[2]).abs());
                    if ring != r {
                        continue;
                    }
                    let key = ((z as usize) * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                    for &i in &self.entries[self.starts[key]..self.starts[key + 1]] {
                        f(i);
                    }
                }
            }
        }
    }

    fn max_ring(&self, center: [isize; 3]) -> isize {
        (0..3)
            .map(|a| center[a].abs().max((self.dims[a] as isize - 1 - center[a]).abs()))
            .max()
            .unwrap_or(0)
    }

    /// Exact kNN for one query; identical ordering and tie-breaking to [`knn`].
    pub fn nearest(&self, q: &Point3, k: usize) -> Vec<(f64, usize)> {
        let center = self.cell_coord(q);
        let last = self.max_ring(center);
        let mut cand: Vec<(f64, usize)> = Vec::new();
        let mut r = 0;
        loop {
            self.visit_shell(center, r, |i| cand.push((dist2(q, &self.points[i]), i)));
            if r >= last {
                break;
            }
            if cand.len() >= k {
                cand = k_smallest(cand, k);
                // Unvisited cells lie at least r * cell away from the query.
                let reach = r as f64 * self.cell;
                if cand[k - 1].0 < reach * reach {
                    break;
                }
            }
            r += 1;
        }
        k_smallest(cand, k)
    }
}

/// Exact kNN accelerated by a uniform grid; results match [`knn`] exactly.
pub fn knn_grid(queries: &[Point3], support: &[Point3], k: usize) -> Result<NeighborIndex> {
    validate_knn(queries, support, k)?;
    let grid = UniformGrid::build(support, 4.max(k / 2))?;
    let lists = per_query(queries, support.len(), |q| grid.nearest(q, k));
    Ok(NeighborIndex::from_lists(lists, support.len()))
}

/// Up to `max_k` supports within `radius`, nearest first. An empty ball
/// falls back to the single nearest support point.
pub fn ball_query(queries: &[Point3], support: &[Point3], radius: f64, max_k: usize) -> Result<NeighborIndex> {
    if support.is_empty() {
        return Err(Error::EmptyInput("ball_query support"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if max_k == 0 {
        return Err(Error::InvalidArgument("max_k must be positive".into()));
    }
    let r2 = radius * radius;
    let lists = per_query(queries, support.len(), |q| {
        let all: Vec<(f64, usize)> = support.iter().enumerate().map(|(i, p)| (dist2(q, p), i)).collect();
        let inside: Vec<(f64, usize)> = all.iter().copied().filter(|c| c.0 <= r2).collect();
        if inside.is_empty() {
            k_smallest(all, 1)
        } else {
            k_smallest(inside, max_k)
        }
    });
    Ok(NeighborIndex::from_lists(lists, support.len()))
}
