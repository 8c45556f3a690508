//! Gaussian smoothing, binary morphology and connected components on 2D
//! and 3D grids.
//!
//! Gaussian kernels are truncated and normalized to unit sum. Borders are
//! handled by reflection without repeating the edge sample (`dcb|abcd|cba`).
//! Morphology treats out-of-bounds samples as neutral: they never erode and
//! never dilate.

use std::collections::VecDeque;

use crate::volume_io::{Grid2, Grid3, Mask2, Mask3};

/// Discrete Gaussian of odd `size`, with σ = size / 6.
pub fn gaussian_kernel_sized(size: usize) -> Vec<f64> {
    assert!(size % 2 == 1 && size >= 1, "kernel size must be odd");
    gaussian_kernel(size / 2, size as f64 / 6.0)
}

/// Discrete Gaussian truncated at 3σ.
pub fn gaussian_kernel_sigma(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    gaussian_kernel(radius, sigma)
}

fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        let mut k = vec![0.0; 2 * radius + 1];
        k[radius] = 1.0;
        return k;
    }
    let r = radius as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Convolves `len` samples laid out at `stride` starting at `base`.
fn convolve_line(data: &mut [f64], base: usize, stride: usize, len: usize, kernel: &[f64], buf: &mut Vec<f64>) {
    // The line is copied once with reflected margins, then accumulated one
    // tap at a time across the whole line (same per-pixel order as a dot
    // product, but independent across pixels).
    let r = kernel.len() / 2;
    buf.clear();
    buf.extend((0..r).map(|j| data[base + reflect(j as isize - r as isize, len) * stride]));
    if stride == 1 {
        buf.extend_from_slice(&data[base..base + len]);
    } else {
        buf.extend((0..len).map(|i| data[base + i * stride]));
    }
    buf.extend((len..len + r).map(|i| data[base + reflect(i as isize, len) * stride]));
    let mut acc = vec![0.0; len];
    for (k, &w) in kernel.iter().enumerate() {
        for (a, &v) in acc.iter_mut().zip(&buf[k..k + len]) {
            *a += w * v;
        }
    }
    for (i, a) in acc.into_iter().enumerate() {
        data[base + i * stride] = a;
    }
}

/// Separable blur of a 2D grid, the same kernel along rows and columns.
pub fn blur_2d(grid: &Grid2<f64>, kernel: &[f64]) -> Grid2<f64> {
    let (h, w) = grid.shape();
    let mut rows = grid.clone();
    let data = rows.data_mut();
    let mut buf = Vec::new();
    for r in 0..h {
        convolve_line(data, r * w, 1, w, kernel, &mut buf);
    }
    // Columns are filtered a whole row at a time; each pixel still sums
    // its taps in kernel order.
    let radius = (kernel.len() / 2) as isize;
    let mut out = Grid2::filled(h, w, 0.0);
    for (r, dst) in out.data_mut().chunks_exact_mut(w).enumerate() {
        for (k, &wk) in kernel.iter().enumerate() {
            let src = reflect(r as isize + k as isize - radius, h);
            for (d, &v) in dst.iter_mut().zip(&data[src * w..(src + 1) * w]) {
                *d += wk * v;
            }
        }
    }
    out
}

/// Separable blur of a 3D grid along all three axes.
pub fn blur_3d(grid: &Grid3<f64>, kernel: &[f64]) -> Grid3<f64> {
    let [nx, ny, nz] = grid.dims();
    let mut out = grid.clone();
    let data = out.data_mut();
    let mut buf = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            convolve_line(data, nx * (y + ny * z), 1, nx, kernel, &mut buf);
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            convolve_line(data, x + nx * ny * z, nx, ny, kernel, &mut buf);
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            convolve_line(data, x + nx * y, nx * ny, nz, kernel, &mut buf);
        }
    }
    out
}

/// Linear rescale to [0, 255]; a constant field maps to 0.
pub fn rescale_255(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range * 255.0 } else { 0.0 };
    }
}

/// Erosion or dilation along one axis with a 3-wide window.
fn morph_line(data: &mut [bool], base: usize, stride: usize, len: usize, erode: bool, buf: &mut Vec<bool>) {
    buf.clear();
    buf.extend((0..len).map(|i| data[base + i * stride]));
    for i in 0..len {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(len - 1);
        let window = &buf[lo..=hi];
        data[base + i * stride] = if erode {
            window.iter().all(|&b| b)
        } else {
            window.iter().any(|&b| b)
        };
    }
}

fn square_2d(mask: &Mask2, erode: bool) -> Mask2 {
    let (h, w) = mask.shape();
    let op = |a: bool, b: bool| if erode { a & b } else { a | b };
    // Windows are truncated at the border, so edges are neither eroded nor
    // dilated by outside pixels.
    let mut rows = mask.clone();
    for (dst, src) in rows.data_mut().chunks_exact_mut(w).zip(mask.data().chunks_exact(w)) {
        dst[0] = op(src[0], src[1.min(w - 1)]);
        dst[w - 1] = op(src[w - 1], src[w.saturating_sub(2)]);
        for (d, win) in dst[1..].iter_mut().zip(src.windows(3)) {
            *d = op(op(win[0], win[1]), win[2]);
        }
    }
    let rd = rows.data();
    let mut out = rows.clone();
    for (r, dst) in out.data_mut().chunks_exact_mut(w).enumerate() {
        let up = &rd[r.saturating_sub(1) * w..][..w];
        let mid = &rd[r * w..][..w];
        let down = &rd[(r + 1).min(h - 1) * w..][..w];
        for c in 0..w {
            dst[c] = op(op(up[c], mid[c]), down[c]);
        }
    }
    out
}

fn cube_3d(mask: &Mask3, erode: bool) -> Mask3 {
    let [nx, ny, nz] = mask.dims();
    let mut out = mask.clone();
    let data = out.data_mut();
    let mut buf = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            morph_line(data, nx * (y + ny * z), 1, nx, erode, &mut buf);
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            morph_line(data, x + nx * ny * z, nx, ny, erode, &mut buf);
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            morph_line(data, x + nx * y, nx * ny, nz, erode, &mut buf);
        }
    }
    out
}

/// Opening with a 3×3 square.
pub fn open_2d(mask: &Mask2) -> Mask2 {
    square_2d(&square_2d(mask, true), false)
}

/// Closing with a 3×3 square.
pub fn close_2d(mask: &Mask2) -> Mask2 {
    square_2d(&square_2d(mask, false), true)
}

pub fn open_3d(mask: &Mask3) -> Mask3 {
    cube_3d(&cube_3d(mask, true), false)
}

pub fn close_3d(mask: &Mask3) -> Mask3 {
    cube_3d(&cube_3d(mask, false), true)
}

/// Offsets `(dr, dc)` of the Euclidean disk `dr² + dc² ≤ r²`.
/// Radius 3 gives 29 offsets.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Offsets of the Euclidean ball of the given radius.
pub fn ball_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Dilation by a Euclidean disk.
pub fn dilate_disk(mask: &Mask2, radius: usize) -> Mask2 {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.shape();
    let offsets = disk_offsets(radius);
    let mut out = Grid2::filled(h, w, false);
    for r in 0..h {
        for c in 0..w {
            if !*mask.get(r, c) {
                continue;
            }
            for &(dr, dc) in &offsets {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    out.set(rr as usize, cc as usize, true);
                }
            }
        }
    }
    out
}

/// Dilation by a Euclidean ball.
pub fn dilate_ball(mask: &Mask3, radius: usize) -> Mask3 {
    if radius == 0 {
        return mask.clone();
    }
    let dims = mask.dims();
    let offsets = ball_offsets(radius);
    let mut out = mask.map(|_| false);
    let [nx, ny, _] = dims;
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &b)| b) {
        let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
        for off in &offsets {
            let q = [
                p[0] as isize + off[0],
                p[1] as isize + off[1],
                p[2] as isize + off[2],
            ];
            if q.iter().zip(dims).all(|(&v, d)| v >= 0 && (v as usize) < d) {
                let li = out.linear(q[0] as usize, q[1] as usize, q[2] as usize);
                out.data_mut()[li] = true;
            }
        }
    }
    out
}

/// Keeps only the largest 26-connected component; ties go to the component
/// found first in linear order.
pub fn largest_component_3d(mask: &Mask3) -> Mask3 {
    let [nx, ny, nz] = mask.dims();
    let n = mask.len();
    let mut label = vec![0u32; n];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !mask.data()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y, z) = ((i % nx) as isize, ((i / nx) % ny) as isize, (i / (nx * ny)) as isize);
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                        if xx < 0 || yy < 0 || zz < 0 {
                            continue;
                        }
                        let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                        if xx >= nx || yy >= ny || zz >= nz {
                            continue;
                        }
                        let j = xx + nx * (yy + ny * zz);
                        if mask.data()[j] && label[j] == 0 {
                            label[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    let keep = best.1;
    let data = label.iter().map(|&l| keep != 0 && l == keep).collect();
    Grid3::from_vec(mask.dims(), mask.spacing(), data).expect("same geometry")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_normalized() {
        let k = gaussian_kernel_sized(15);
        assert_eq!(k.len(), 15);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k[7] > k[6] && (k[0] - k[14]).abs() < 1e-15);
        assert_eq!(gaussian_kernel_sigma(1.5).len(), 11);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn blur_preserves_constant() {
        let g = Grid2::filled(6, 9, 4.0f64);
        let b = blur_2d(&g, &gaussian_kernel_sized(15));
        assert!(b.data().iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn disk_has_29_pixels_at_radius_3() {
        assert_eq!(disk_offsets(3).len(), 29);
        let mut m = Grid2::filled(11, 11, false);
        m.set(5, 5, true);
        let d = dilate_disk(&m, 3);
        assert_eq!(d.count(), 29);
        assert!(*d.get(2, 5) && *d.get(5, 8) && *d.get(3, 3) && !d.get(2, 3));
    }

    #[test]
    fn opening_removes_specks_closing_fills_holes() {
        let mut m = Grid2::filled(9, 9, false);
        m.set(0, 0, true);
        for r in 3..8 {
            for c in 3..8 {
                m.set(r, c, true);
            }
        }
        let o = open_2d(&m);
        assert!(!o.get(0, 0));
        assert_eq!(o.count(), 25);

        let mut holed = Grid2::filled(7, 7, true);
        holed.set(3, 3, false);
        assert_eq!(close_2d(&holed).count(), 49);
    }

    #[test]
    fn largest_component_picks_biggest() {
        let mut m = Grid3::filled([8, 8, 8], [1.0; 3], false).unwrap();
        let idx = m.linear(0, 0, 0);
        m.data_mut()[idx] = true;
        for z in 4..7 {
            for y in 4..6 {
                let i = m.linear(5, y, z);
                m.data_mut()[i] = true;
            }
        }
        let l = largest_component_3d(&m);
        assert_eq!(l.count(), 6);
        assert!(!l.get(0, 0, 0));
    }

    #[test]
    fn ball_dilation_volume() {
        let mut m = Grid3::filled([9, 9, 9], [1.0; 3], false).unwrap();
        let i = m.linear(4, 4, 4);
        m.data_mut()[i] = true;
        assert_eq!(dilate_ball(&m, 2).count(), ball_offsets(2).len());
        assert_eq!(ball_offsets(1).len(), 7);
    }
}
