use crate::error::{Error, Result};

const INF: f64 = 1e20;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), in place on `f`.
fn dt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
    f.copy_from_slice(&out[..n]);
}

/// Exact Euclidean distance (in pixels) from every pixel to the nearest
/// `true` pixel of a row-major `h × w` mask. Pixels inside the mask get 0.
/// A mask with no foreground is an error.
pub fn distance_transform(mask: &[bool], h: usize, w: usize) -> Result<Vec<f64>> {
    if mask.len() != h * w {
        return Err(Error::shape("distance_transform", format!("{} pixels", h * w), mask.len().to_string()));
    }
    if !mask.iter().any(|&b| b) {
        return Err(Error::Invalid("distance transform of a mask with no foreground pixels".into()));
    }
    let mut grid: Vec<f64> = mask.iter().map(|&b| if b { 0.0 } else { INF }).collect();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut out = vec![0.0; n];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt_1d(&mut f[..h], &mut v, &mut z, &mut out);
        for y in 0..h {
            grid[y * w + x] = f[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt_1d(&mut f[..w], &mut v, &mut z, &mut out);
        grid[y * w..(y + 1) * w].copy_from_slice(&f[..w]);
    }
    Ok(grid.into_iter().map(f64::sqrt).collect())
}

/// Quadratic-time reference used to check [`distance_transform`].
pub fn distance_transform_brute(mask: &[bool], h: usize, w: usize) -> Vec<f64> {
    let on: Vec<(usize, usize)> = (0..h * w).filter(|&i| mask[i]).map(|i| (i / w, i % w)).collect();
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            on.iter()
                .map(|&(a, b)| {
                    let dy = a as f64 - y as f64;
                    let dx = b as f64 - x as f64;
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
