//! Bilinear sampling on channel-last feature grids.
//!
//! Grid coordinates put cell `(row, col)` at `(x, y) = (col, row)`. Samples
//! outside `[0, w-1] × [0, h-1]` are clamped to the border.

/// The four `(cell index, weight)` taps of a clamped bilinear sample.
pub fn bilinear_taps(h: usize, w: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let (x0, x1, fx) = axis(w, x);
    let (y0, y1, fy) = axis(h, y);
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

fn axis(n: usize, x: f64) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, (n - 1) as f64) };
    let i0 = (x.floor() as usize).min(n - 2);
    (i0, i0 + 1, x - i0 as f64)
}

/// Bilinear sample of an `h × w × c` grid at grid coordinate `(x, y)`.
pub fn bilinear_sample<T: Copy + Into<f64>>(
    grid: &[T],
    h: usize,
    w: usize,
    c: usize,
    x: f64,
    y: f64,
) -> Vec<f64> {
    debug_assert_eq!(grid.len(), h * w * c);
    let mut out = vec![0.0; c];
    for (cell, wt) in bilinear_taps(h, w, x, y) {
        if wt == 0.0 {
            continue;
        }
        let base = cell * c;
        for (o, g) in out.iter_mut().zip(&grid[base..base + c]) {
            *o += wt * (*g).into();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    // Straightforward reference: clamp, find the enclosing cells, blend rows
    // then columns.
    fn reference(grid: &[f64], h: usize, w: usize, c: usize, x: f64, y: f64) -> Vec<f64> {
        let xc = x.max(0.0).min((w - 1) as f64);
        let yc = y.max(0.0).min((h - 1) as f64);
        let xl = xc.floor() as usize;
        let yl = yc.floor() as usize;
        let xh = (xl + 1).min(w - 1);
        let yh = (yl + 1).min(h - 1);
        let ax = xc - xl as f64;
        let ay = yc - yl as f64;
        (0..c)
            .map(|k| {
                let g = |r: usize, q: usize| grid[(r * w + q) * c + k];
                let top = g(yl, xl) * (1.0 - ax) + g(yl, xh) * ax;
                let bot = g(yh, xl) * (1.0 - ax) + g(yh, xh) * ax;
                top * (1.0 - ay) + bot * ay
            })
            .collect()
    }

    #[test]
    fn cell_center_returns_cell() {
        let grid: Vec<f64> = (0..4 * 5 * 2).map(|i| i as f64).collect();
        let s = bilinear_sample(&grid, 4, 5, 2, 3.0, 2.0);
        assert_eq!(s, vec![grid[(2 * 5 + 3) * 2], grid[(2 * 5 + 3) * 2 + 1]]);
    }

    #[test]
    fn horizontal_midpoint_averages() {
        let mut grid = vec![0.0f64; 3 * 3];
        grid[4] = 2.0; // (1,1)
        grid[5] = 5.0; // (1,2)
        let s = bilinear_sample(&grid, 3, 3, 1, 1.5, 1.0);
        assert!((s[0] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_grid_clamps_to_border() {
        let grid: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(bilinear_sample(&grid, 3, 3, 1, -4.0, -1.0), vec![0.0]);
        assert_eq!(bilinear_sample(&grid, 3, 3, 1, 10.0, 10.0), vec![8.0]);
        assert_eq!(bilinear_sample(&grid, 3, 3, 1, 1.0, 7.5), vec![7.0]);
    }

    #[test]
    fn matches_reference_on_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let h = rng.random_range(1..7);
            let w = rng.random_range(1..7);
            let c = rng.random_range(1..4);
            let grid: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = rng.random_range(-2.0..(w as f64 + 1.0));
            let y = rng.random_range(-2.0..(h as f64 + 1.0));
            let a = bilinear_sample(&grid, h, w, c, x, y);
            let b = reference(&grid, h, w, c, x, y);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-6, "{p} vs {q}");
            }
        }
    }
}
