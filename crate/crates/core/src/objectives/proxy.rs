//! Deterministic structural stand-in for a learned perceptual distance.
//!
//! For scales `s = 0, 1, 2` (2×2 average pooling between scales, odd edges
//! dropped) the proxy adds the mean absolute difference of horizontal and of
//! vertical forward-difference maps; the coarsest scale also contributes the
//! mean squared difference of the pooled images.

pub const PROXY_SCALES: usize = 3;

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

fn pool(p: &Plane) -> Plane {
    let (w, h) = (p.w / 2, p.h / 2);
    let mut data = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| p.data[(yy * p.w + xx) * 3 + c];
                data[(y * w + x) * 3 + c] =
                    0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
            }
        }
    }
    Plane { w, h, data }
}

fn unpool_add(fine: &mut [f64], fw: usize, coarse: &[f64], cw: usize, ch: usize) {
    for y in 0..ch {
        for x in 0..cw {
            for c in 0..3 {
                let g = 0.25 * coarse[(y * cw + x) * 3 + c];
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    fine[((2 * y + dy) * fw + 2 * x + dx) * 3 + c] += g;
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient-map L1 of one scale; accumulates `d/d b` into `db`.
fn edge_term(a: &Plane, b: &Plane, db: &mut [f64]) -> f64 {
    let (w, h) = (a.w, a.h);
    let mut total = 0.0;
    for (dx, dy) in [(1usize, 0usize), (0, 1)] {
        if w <= dx || h <= dy {
            continue;
        }
        let count = ((w - dx) * (h - dy) * 3) as f64;
        let mut s = 0.0;
        for y in 0..h - dy {
            for x in 0..w - dx {
                for c in 0..3 {
                    let i0 = (y * w + x) * 3 + c;
                    let i1 = ((y + dy) * w + x + dx) * 3 + c;
                    let d = (b.data[i1] - b.data[i0]) - (a.data[i1] - a.data[i0]);
                    s += d.abs();
                    let g = sign(d) / count;
                    db[i1] += g;
                    db[i0] -= g;
                }
            }
        }
        total += s / count;
    }
    total
}

/// Proxy distance between `a` (target) and `b` (rendered), both row-major
/// RGB planes of `w × h`, and its gradient with respect to `b`.
pub fn proxy_with_grad(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, Vec<f64>) {
    let mut pa = vec![Plane { w, h, data: a.to_vec() }];
    let mut pb = vec![Plane { w, h, data: b.to_vec() }];
    while pa.len() < PROXY_SCALES && pa.last().unwrap().w >= 2 && pa.last().unwrap().h >= 2 {
        let na = pool(pa.last().unwrap());
        let nb = pool(pb.last().unwrap());
        pa.push(na);
        pb.push(nb);
    }
    let mut grads: Vec<Vec<f64>> = pb.iter().map(|p| vec![0.0; p.data.len()]).collect();
    let mut value = 0.0;
    for s in 0..pa.len() {
        value += edge_term(&pa[s], &pb[s], &mut grads[s]);
    }
    let last = pa.len() - 1;
    let n = pa[last].data.len() as f64;
    for (i, (x, y)) in pa[last].data.iter().zip(&pb[last].data).enumerate() {
        let d = y - x;
        value += d * d / n;
        grads[last][i] += 2.0 * d / n;
    }
    for s in (1..pa.len()).rev() {
        let coarse = std::mem::take(&mut grads[s]);
        unpool_add(&mut grads[s - 1], pb[s - 1].w, &coarse, pb[s].w, pb[s].h);
    }
    (value, grads.swap_remove(0))
}

pub fn perceptual_proxy(a: &crate::imaging::Image, b: &crate::imaging::Image) -> f64 {
    proxy_with_grad(&a.data, &b.data, a.width, a.height).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;
    use proptest::prelude::*;

    #[test]
    fn equal_images_give_zero() {
        let a = Image::from_data(5, 4, (0..60).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(perceptual_proxy(&a, &a), 0.0);
    }

    #[test]
    fn constant_offset_is_offset_squared() {
        let a = Image::filled(16, 16, [0.2, 0.4, 0.6]);
        let b = Image::filled(16, 16, [0.5, 0.7, 0.9]);
        assert!((perceptual_proxy(&a, &b) - 0.09).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric(vals in proptest::collection::vec(0.0f64..1.0, 2 * 9 * 7 * 3)) {
            let a = Image::from_data(9, 7, vals[..189].to_vec()).unwrap();
            let b = Image::from_data(9, 7, vals[189..].to_vec()).unwrap();
            let ab = perceptual_proxy(&a, &b);
            let ba = perceptual_proxy(&b, &a);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert!(ab >= 0.0);
        }
    }
}
