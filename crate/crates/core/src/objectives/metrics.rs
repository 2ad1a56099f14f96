use crate::imaging::Image;

pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Image, b: &Image) -> f64 {
    let n = a.data.len().max(1) as f64;
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// `10·log10(1 / MSE)` for unit-range images, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over channels and all valid window positions, with an 11×11
/// Gaussian window (σ = 1.5). Images smaller than the window use the largest
/// odd window that fits.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    let (w, h) = (a.width, a.height);
    let mut size = SSIM_WIN.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    if size == 0 {
        return 1.0;
    }
    let k = gaussian_window(size);
    let (ow, oh) = (w - size + 1, h - size + 1);
    let mut total = 0.0;
    for c in 0..3 {
        let at = |img: &Image, x: usize, y: usize| img.data[(y * w + x) * 3 + c];
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..size {
                    for i in 0..size {
                        let g = k[i] * k[j];
                        let (x, y) = (at(a, ox + i, oy + j), at(b, ox + i, oy + j));
                        ma += g * x;
                        mb += g * y;
                        saa += g * x * x;
                        sbb += g * y * y;
                        sab += g * x * y;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            }
        }
    }
    total / (3 * ow * oh) as f64
}
