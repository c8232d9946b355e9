use super::cloud::{dist2, Point3};
use crate::error::{Error, Result};

/// Greedy farthest point sampling.
///
/// The first selected index is `start`; every later pick maximizes the
/// minimum (squared Euclidean) distance to the points already chosen, with
/// ties going to the smallest index. Already-selected points are never
/// picked again, so duplicates in the input still yield distinct indices.
pub fn farthest_point_sample(positions: &[Point3], count: usize, start: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::EmptyInput("farthest_point_sample positions"));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if count > n {
        return Err(Error::SampleCountExceedsPopulation { requested: count, available: n });
    }
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, len: n });
    }

    let mut selected = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == count {
            break;
        }
        let anchor = positions[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d2 = dist2(p, &anchor);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}
