//! Deterministic sample sets (Halton points, sphere directions, box grids).

use crate::model::Bound;

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// First `count` points of the Halton sequence in `[0, 1)^dim` (index 0 skipped).
pub fn halton(dim: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(
        dim <= PRIMES.len(),
        "Halton sequence supports up to {} dimensions",
        PRIMES.len()
    );
    (1..=count as u64)
        .map(|i| (0..dim).map(|d| radical_inverse(i, PRIMES[d])).collect())
        .collect()
}

/// Halton points mapped into a box.
pub fn halton_in_box(bounds: &[Bound], count: usize) -> Vec<Vec<f64>> {
    halton(bounds.len(), count)
        .into_iter()
        .map(|p| {
            p.iter()
                .zip(bounds)
                .map(|(t, b)| b.lo + t * (b.hi - b.lo))
                .collect()
        })
        .collect()
}

/// Unit directions: evenly spaced angles in 2-D, `±1` in 1-D, normalized
/// Halton points of `[−1, 1]^n` otherwise.
pub fn unit_sphere(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => halton(dim, 4 * count)
            .into_iter()
            .map(|p| p.into_iter().map(|t| 2.0 * t - 1.0).collect::<Vec<_>>())
            .filter_map(|p| {
                let n = crate::model::norm(&p);
                (n > 1e-3 && n <= 1.0).then(|| p.into_iter().map(|v| v / n).collect())
            })
            .take(count)
            .collect(),
    }
}

/// All `2^n` corners of a box.
pub fn box_corners(bounds: &[Bound]) -> Vec<Vec<f64>> {
    let n = bounds.len();
    (0..1usize << n)
        .map(|mask| {
            bounds
                .iter()
                .enumerate()
                .map(|(i, b)| if mask >> i & 1 == 1 { b.hi } else { b.lo })
                .collect()
        })
        .collect()
}

/// Centres of the `2n` faces of a box.
pub fn face_midpoints(bounds: &[Bound]) -> Vec<Vec<f64>> {
    let centre: Vec<f64> = bounds.iter().map(|b| 0.5 * (b.lo + b.hi)).collect();
    let mut out = Vec::with_capacity(2 * bounds.len());
    for (i, b) in bounds.iter().enumerate() {
        for v in [b.lo, b.hi] {
            let mut p = centre.clone();
            p[i] = v;
            out.push(p);
        }
    }
    out
}

/// Regular grid of `per_axis^n` points covering a box, endpoints included.
pub fn box_grid(bounds: &[Bound], per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(2);
    let n = bounds.len();
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            bounds
                .iter()
                .map(|b| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    b.lo + (b.hi - b.lo) * k as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_in_unit_cube_and_distinct() {
        let pts = halton(3, 100);
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().flatten().all(|v| (0.0..1.0).contains(v)));
        assert_ne!(pts[0], pts[1]);
        assert_eq!(pts[0], vec![0.5, 1.0 / 3.0, 0.2]);
    }

    #[test]
    fn sphere_points_are_unit() {
        for dim in 1..5 {
            for p in unit_sphere(dim, 20) {
                assert!((crate::model::norm(&p) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corners_and_faces() {
        let b = vec![Bound::symmetric(1.0), Bound::new(0.0, 2.0).unwrap()];
        assert_eq!(box_corners(&b).len(), 4);
        assert!(face_midpoints(&b).contains(&vec![1.0, 1.0]));
        let g = box_grid(&b, 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![-1.0, 2.0]));
    }
}
