//! Top-two principal components by power iteration, and an SVG scatter.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Projection of mean-centered rows onto the two leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    /// `n × 2` coordinates.
    pub coords: Matrix,
    /// Variance of the coordinates along each axis.
    pub variances: [f64; 2],
}

fn covariance(x: &Matrix, mean: &[f64]) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut c = vec![0.0; d * d];
    for r in 0..n {
        let row: Vec<f64> = x.row_slice(r).iter().zip(mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                c[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            c[i * d + j] /= n as f64;
            c[j * d + i] = c[i * d + j];
        }
    }
    c
}

fn leading_eigenvector(c: &[f64], d: usize) -> (Vec<f64>, f64) {
    // Fixed, non-symmetric start so that runs are reproducible.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 + 1.0).sqrt().fract()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| c[i * d + j] * v[j]).sum()).collect();
        let nw = norm(&w);
        if nw == 0.0 {
            return (v, 0.0);
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        lambda = nw;
        if delta < 1e-12 {
            break;
        }
    }
    // Sign convention: the largest-magnitude entry is positive.
    let k = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (v, lambda)
}

pub fn pca2(x: &Matrix) -> Result<Projection> {
    let (n, d) = x.shape();
    if n < 2 || d < 2 {
        return Err(Error::Contract(format!(
            "a 2-D projection needs at least 2 rows and 2 columns, got {n}x{d}"
        )));
    }
    let mean = x.mean_rows();
    let mut c = covariance(x, &mean);
    let (a1, l1) = leading_eigenvector(&c, d);
    for i in 0..d {
        for j in 0..d {
            c[i * d + j] -= l1 * a1[i] * a1[j];
        }
    }
    let (mut a2, _) = leading_eigenvector(&c, d);
    // Re-orthogonalize against the first axis to remove drift.
    let dot: f64 = a1.iter().zip(&a2).map(|(p, q)| p * q).sum();
    a2.iter_mut().zip(&a1).for_each(|(q, p)| *q -= dot * p);
    let n2 = a2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n2 > 0.0 {
        a2.iter_mut().for_each(|v| *v /= n2);
    }
    let mut coords = Matrix::zeros(n, 2);
    for r in 0..n {
        let row = x.row_slice(r);
        for (k, axis) in [&a1, &a2].into_iter().enumerate() {
            let v: f64 = row.iter().zip(&mean).zip(axis).map(|((v, m), a)| (v - m) * a).sum();
            coords.set(r, k, v);
        }
    }
    let var = |k: usize| {
        let m = (0..n).map(|r| coords.get(r, k)).sum::<f64>() / n as f64;
        (0..n).map(|r| (coords.get(r, k) - m).powi(2)).sum::<f64>() / n as f64
    };
    let variances = [var(0), var(1)];
    Ok(Projection {
        mean,
        axes: [a1, a2],
        coords,
        variances,
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Scatter plot of 2-D points colored by tag, with a legend.
pub fn scatter_svg(coords: &Matrix, tags: &[&str], title: &str) -> String {
    let (w, h, pad) = (640.0, 480.0, 40.0);
    let n = coords.rows();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in 0..n {
        x0 = x0.min(coords.get(r, 0));
        x1 = x1.max(coords.get(r, 0));
        y0 = y0.min(coords.get(r, 1));
        y1 = y1.max(coords.get(r, 1));
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (sx, sy) = ((w - 2.0 * pad) / span(x0, x1), (h - 2.0 * pad) / span(y0, y1));
    let mut legend: Vec<&str> = Vec::new();
    for t in tags {
        if !legend.contains(t) {
            legend.push(t);
        }
    }
    let color = |t: &str| PALETTE[legend.iter().position(|l| *l == t).unwrap_or(0) % PALETTE.len()];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#
    );
    for (r, tag) in tags.iter().enumerate().take(n) {
        let cx = pad + (coords.get(r, 0) - x0) * sx;
        let cy = h - pad - (coords.get(r, 1) - y0) * sy;
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            color(tag)
        );
    }
    for (i, t) in legend.iter().enumerate() {
        let y = pad + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{t}</text>"#,
            w - 120.0,
            color(t),
            w - 110.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_dominant_axis() {
        // Points spread along (1, 1) with a small orthogonal component.
        let rows: Vec<[f64; 2]> = (0..20)
            .map(|i| {
                let t = (i / 2) as f64 - 4.5;
                let e = if i % 2 == 0 { 0.1 } else { -0.1 };
                [t + e, t - e]
            })
            .collect();
        let p = pca2(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(
            (p.axes[0][0] - r).abs() < 1e-9 && (p.axes[0][1] - r).abs() < 1e-9,
            "{:?}",
            p.axes
        );
        assert!(p.variances[0] >= p.variances[1]);
        for k in 0..2 {
            let m: f64 = (0..20).map(|i| p.coords.get(i, k)).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn svg_has_one_point_per_row() {
        let c = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]).unwrap();
        let svg = scatter_svg(&c, &["a", "b", "a"], "t");
        assert_eq!(svg.matches("r=\"2.5\"").count(), 3);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
