//! Linear probes on learned embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{sigmoid, Matrix};

/// Solves `A x = b` for symmetric positive-definite `A` (row-major `n × n`)
/// by Cholesky factorization.
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if !(d > 0.0) {
                    return Err(Error::Contract("probe system is not positive definite".into()));
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

/// Column means and standard deviations of the given rows (sd floored).
fn column_stats(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row_slice(r)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for &r in rows {
        for ((s, v), m) in sd.iter_mut().zip(x.row_slice(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, sd.into_iter().map(|v| v.sqrt().max(1e-12)).collect())
}

/// Standardized copies of `rows`, with a trailing 1 when `intercept`.
fn design(x: &Matrix, rows: &[usize], mean: &[f64], sd: &[f64], intercept: bool) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            let mut v: Vec<f64> = x
                .row_slice(r)
                .iter()
                .zip(mean)
                .zip(sd)
                .map(|((v, m), s)| (v - m) / s)
                .collect();
            if intercept {
                v.push(1.0);
            }
            v
        })
        .collect()
}

fn split(n: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract("a probe needs at least two samples per class".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(k);
    Ok((idx, test))
}

/// Held-out R² of a ridge regression from `x` to `y`, pooled over the
/// columns of `y`: `1 − Σ residual² / Σ (y − mean_test)²`.
pub fn ridge_r2(x: &Matrix, y: &Matrix, train_fraction: f64, alpha: f64, seed: u64) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::dim(format!("{} inputs for {} targets", x.rows(), y.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = split(x.rows(), train_fraction, &mut rng)?;
    let (mean, sd) = column_stats(x, &train);
    let (y_mean, _) = column_stats(y, &train);
    let xt = design(x, &train, &mean, &sd, false);
    let d = x.cols();
    let mut gram = vec![0.0; d * d];
    for row in &xt {
        for i in 0..d {
            for j in 0..d {
                gram[i * d + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        gram[i * d + i] += alpha;
    }
    let xe = design(x, &test, &mean, &sd, false);
    let (ty_mean, _) = column_stats(y, &test);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for c in 0..y.cols() {
        let mut rhs = vec![0.0; d];
        for (row, &r) in xt.iter().zip(&train) {
            let yc = y.get(r, c) - y_mean[c];
            for i in 0..d {
                rhs[i] += row[i] * yc;
            }
        }
        let w = cholesky_solve(&gram, &rhs, d)?;
        for (row, &r) in xe.iter().zip(&test) {
            let pred = y_mean[c] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            ss_res += (y.get(r, c) - pred).powi(2);
            ss_tot += (y.get(r, c) - ty_mean[c]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::Contract(
            "probe targets are constant on the held-out rows".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Held-out accuracy of an L2-regularized logistic regression separating
/// the rows of `a` (class 0) from the rows of `b` (class 1). The larger
/// class is subsampled to the size of the smaller one, so chance is 0.5.
pub fn domain_probe_accuracy(a: &Matrix, b: &Matrix, train_fraction: f64, l2: f64, seed: u64) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "probe classes have {} and {} columns",
            a.cols(),
            b.cols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = a.rows().min(b.rows());
    let pick = |n: usize, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.truncate(m);
        idx
    };
    let (ia, ib) = (pick(a.rows(), &mut rng), pick(b.rows(), &mut rng));
    let mut rows: Vec<&[f64]> = ia.iter().map(|&i| a.row_slice(i)).collect();
    rows.extend(ib.iter().map(|&i| b.row_slice(i)));
    let x = Matrix::from_rows(&rows)?;
    let labels: Vec<f64> = (0..2 * m).map(|i| if i < m { 0.0 } else { 1.0 }).collect();

    // Stratified split: the same train fraction within each class.
    let (tr0, te0) = split(m, train_fraction, &mut rng)?;
    let (tr1, te1) = split(m, train_fraction, &mut rng)?;
    let train: Vec<usize> = tr0.iter().copied().chain(tr1.iter().map(|i| i + m)).collect();
    let test: Vec<usize> = te0.iter().copied().chain(te1.iter().map(|i| i + m)).collect();

    let (mean, sd) = column_stats(&x, &train);
    let xt = design(&x, &train, &mean, &sd, true);
    let d = x.cols() + 1;
    let mut w = vec![0.0; d];
    for _ in 0..50 {
        let mut h = vec![0.0; d * d];
        let mut g = vec![0.0; d];
        for (row, &r) in xt.iter().zip(&train) {
            let p = sigmoid(row.iter().zip(&w).map(|(a, b)| a * b).sum());
            let s = p * (1.0 - p);
            for i in 0..d {
                g[i] += (p - labels[r]) * row[i];
                for j in 0..d {
                    h[i * d + j] += s * row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            g[i] += l2 * w[i];
            h[i * d + i] += l2;
        }
        let step = cholesky_solve(&h, &g, d)?;
        let mut moved = 0.0f64;
        for (wi, si) in w.iter_mut().zip(&step) {
            *wi -= si;
            moved = moved.max(si.abs());
        }
        if moved < 1e-10 {
            break;
        }
    }
    let xe = design(&x, &test, &mean, &sd, true);
    let correct = xe
        .iter()
        .zip(&test)
        .filter(|(row, &r)| {
            let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            (z > 0.0) == (labels[r] == 1.0)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean over rows of `|cos(aᵢ, bᵢ)|`; zero rows contribute 0.
pub fn mean_abs_cosine(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() || a.rows() == 0 {
        return Err(Error::dim(format!(
            "cosine of {}x{} and {}x{} rows",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let total: f64 = (0..a.rows())
        .map(|i| {
            let (u, v) = (a.row_slice(i), b.row_slice(i));
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                (dot / (nu * nv)).abs()
            }
        })
        .sum();
    Ok(total / a.rows() as f64)
}
