//! PSNR and SSIM, including the SSIM gradient used by the photometric loss.

use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "image shape mismatch");
    let n = a.data.len().max(1) as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio for unit-range images, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian blur with zero padding ("same" output size). The
/// kernel is symmetric, so this operator is its own adjoint.
fn blur(src: &[f64], width: usize, height: usize, win: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in win.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += w * src[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in win.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += w * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over all pixels and channels (11x11 Gaussian window, sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_impl(a, b, false).0
}

/// Mean SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(render: &Image, target: &Image) -> (f64, Vec<f64>) {
    let (v, g) = ssim_impl(render, target, true);
    (v, g.expect("gradient requested"))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert!(a.same_shape(b), "image shape mismatch");
    let (w, h) = (a.width, a.height);
    let win = gaussian_window();
    let n_total = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = blur(&x, w, h, &win);
        let mu_y = blur(&y, w, h, &win);
        let e_xx = blur(&xx, w, h, &win);
        let e_yy = blur(&yy, w, h, &win);
        let e_xy = blur(&xy, w, h, &win);
        let mut d_mu = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let scale = s / n_total;
                d_mu[i] = scale
                    * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
                d_exx[i] = -scale / b2;
                d_exy[i] = scale * 2.0 / a2;
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = blur(&d_mu, w, h, &win);
            let g_exx = blur(&d_exx, w, h, &win);
            let g_exy = blur(&d_exy, w, h, &win);
            for i in 0..w * h {
                g[i * 3 + c] = g_mu[i] + 2.0 * x[i] * g_exx[i] + y[i] * g_exy[i];
            }
        }
    }
    (total / n_total, grad)
}
