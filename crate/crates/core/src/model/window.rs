//! Projection-aware window masks between latent tokens and human tokens.
//!
//! A vertex is assigned to the latent cell containing its projection
//! (`floor((u + 0.5) · w / W)`, i.e. pixel `floor(u + 0.5)` divided by the
//! encoder stride), then to token cell `floor(cell / p)`. Query token `q`
//! admits human token `j` when `j`'s token cell lies in the `K × K` block of
//! token cells whose top-left corner is `q - floor((K - 1) / 2)` per axis,
//! clamped so the block stays on the lattice.

use nalgebra::Vector3;

use crate::geometry::{CameraView, MIN_DEPTH};

/// Token cell `(row, col)` of each vertex in one view, `None` when it
/// projects behind the camera or off the latent lattice.
pub fn vertex_token_cells(
    vertices: &[[f64; 3]],
    cam: &CameraView,
    latent_h: usize,
    latent_w: usize,
    patch: usize,
) -> Vec<Option<(usize, usize)>> {
    let sx = latent_w as f64 / cam.width as f64;
    let sy = latent_h as f64 / cam.height as f64;
    vertices
        .iter()
        .map(|v| {
            let pc = cam.to_camera(&Vector3::from(*v));
            if pc.z <= MIN_DEPTH {
                return None;
            }
            let h = cam.k * pc;
            let (u, w) = (h.x / h.z, h.y / h.z);
            let cx = ((u + 0.5) * sx).floor();
            let cy = ((w + 0.5) * sy).floor();
            if !(cx >= 0.0 && cy >= 0.0 && cx < latent_w as f64 && cy < latent_h as f64) {
                return None;
            }
            Some((cy as usize / patch, cx as usize / patch))
        })
        .collect()
}

/// First lattice index of the window anchored at `q` on an axis of `n` cells.
pub fn window_start(q: usize, k: usize, n: usize) -> usize {
    if k >= n {
        return 0;
    }
    let back = (k - 1) / 2;
    q.saturating_sub(back).min(n - k)
}

/// Admitted human-token indices (ascending) for every query token of a
/// `th × tw` lattice.
pub fn window_key_lists(cells: &[Option<(usize, usize)>], th: usize, tw: usize, k_win: usize) -> Vec<Vec<u32>> {
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); th * tw];
    for (j, c) in cells.iter().enumerate() {
        if let Some((r, c)) = c {
            buckets[r * tw + c].push(j as u32);
        }
    }
    let (kh, kw) = (k_win.min(th), k_win.min(tw));
    let mut lists = Vec::with_capacity(th * tw);
    for qr in 0..th {
        let r0 = window_start(qr, k_win, th);
        for qc in 0..tw {
            let c0 = window_start(qc, k_win, tw);
            let mut l: Vec<u32> = Vec::new();
            for r in r0..r0 + kh {
                for c in c0..c0 + kw {
                    l.extend_from_slice(&buckets[r * tw + c]);
                }
            }
            l.sort_unstable();
            lists.push(l);
        }
    }
    lists
}

/// Empty key lists: the human prior is switched off.
pub fn empty_key_lists(tokens: usize) -> Vec<Vec<u32>> {
    vec![Vec::new(); tokens]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_start_clamps() {
        assert_eq!(window_start(0, 2, 8), 0);
        assert_eq!(window_start(3, 2, 8), 3);
        assert_eq!(window_start(7, 2, 8), 6);
        assert_eq!(window_start(3, 3, 8), 2);
        assert_eq!(window_start(0, 3, 8), 0);
        assert_eq!(window_start(5, 9, 8), 0);
    }

    #[test]
    fn k1_admits_only_the_own_cell() {
        let cells = vec![Some((1, 2)), None, Some((0, 0))];
        let lists = window_key_lists(&cells, 3, 4, 1);
        for (q, l) in lists.iter().enumerate() {
            match q {
                6 => assert_eq!(l, &vec![0]),
                0 => assert_eq!(l, &vec![2]),
                _ => assert!(l.is_empty()),
            }
        }
    }

    #[test]
    fn large_window_admits_all_valid() {
        let cells = vec![Some((1, 2)), None, Some((0, 0)), Some((2, 3))];
        let lists = window_key_lists(&cells, 3, 4, 10);
        assert!(lists.iter().all(|l| l == &vec![0, 2, 3]));
    }

    #[test]
    fn one_vertex_per_cell_gives_k_squared_per_query() {
        let (th, tw) = (5, 6);
        let cells: Vec<_> = (0..th * tw).map(|i| Some((i / tw, i % tw))).collect();
        for k in 1..=4 {
            let lists = window_key_lists(&cells, th, tw, k);
            let total: usize = lists.iter().map(|l| l.len()).sum();
            assert_eq!(total, th * tw * k * k);
        }
    }
}
