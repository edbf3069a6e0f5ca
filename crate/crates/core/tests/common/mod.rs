//! Independent reference computations for the integration tests. None of
//! these call into the library's decompositions.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type M = DMatrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    M::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `rows×cols` matrix of rank `min(rank, rows, cols)` built as a product.
pub fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> M {
    if rank == 0 {
        return M::zeros(rows, cols);
    }
    gaussian(rng, rows, rank) * gaussian(rng, rank, cols)
}

/// Repeats some columns of `a` so the set has exact duplicates.
pub fn with_duplicates(rng: &mut ChaCha8Rng, a: &M, extra: usize) -> M {
    if a.ncols() == 0 {
        return a.clone();
    }
    let mut out = M::zeros(a.nrows(), a.ncols() + extra);
    for j in 0..a.ncols() {
        out.set_column(j, &a.column(j));
    }
    for j in 0..extra {
        let src = rng.random_range(0..a.ncols());
        out.set_column(a.ncols() + j, &a.column(src));
    }
    out
}

pub fn rel_diff(a: &M, b: &M) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

// ── Gram–Schmidt ────────────────────────────────────────────────────

/// Orthonormal basis of the column span of `a` by modified Gram–Schmidt
/// with one reorthogonalization pass. A column is accepted when its
/// remainder exceeds `rel_tol` times the largest column norm.
pub fn gs_basis(a: &M, rel_tol: f64) -> M {
    let d = a.nrows();
    let scale = (0..a.ncols()).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v: Vec<f64> = a.column(j).iter().copied().collect();
        for _ in 0..2 {
            for b in &q {
                let c: f64 = (0..d).map(|i| b[i] * v[i]).sum();
                for i in 0..d {
                    v[i] -= c * b[i];
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > rel_tol * scale && n > 0.0 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    M::from_fn(d, q.len(), |i, j| q[j][i])
}

/// `I − QQᵀ` for `Q` the Gram–Schmidt basis of `a`.
pub fn gs_null_projector(a: &M, rel_tol: f64) -> M {
    let q = gs_basis(a, rel_tol);
    M::identity(a.nrows(), a.nrows()) - &q * q.transpose()
}

// ── Dense solves ────────────────────────────────────────────────────

/// Solves `x·A = B` (row-wise systems) by Gaussian elimination with partial
/// pivoting on `Aᵀ xᵀ = Bᵀ`.
pub fn solve_right(a: &M, b: &M) -> M {
    gauss_solve(&a.transpose(), &b.transpose()).transpose()
}

/// Solves `A·x = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &M, b: &M) -> M {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    let m = b.ncols();
    let mut aa: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    let mut bb: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| b[(i, j)]).collect()).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| aa[x][col].abs().partial_cmp(&aa[y][col].abs()).unwrap())
            .unwrap();
        aa.swap(col, piv);
        bb.swap(col, piv);
        let p = aa[col][col];
        assert!(p != 0.0, "oracle hit a singular pivot");
        for r in col + 1..n {
            let f = aa[r][col] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                aa[r][c] -= f * aa[col][c];
            }
            for c in 0..m {
                bb[r][c] -= f * bb[col][c];
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for r in (0..n).rev() {
        for c in 0..m {
            let mut s = bb[r][c];
            for k in r + 1..n {
                s -= aa[r][k] * x[k][c];
            }
            x[r][c] = s / aa[r][r];
        }
    }
    M::from_fn(n, m, |i, j| x[i][j])
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues (unsorted) and eigenvectors as columns.
pub fn jacobi_eigen(s: &M) -> (Vec<f64>, M) {
    let n = s.nrows();
    let mut a = s.clone();
    let mut v = M::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * a.norm() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Pseudo-inverse of a symmetric PSD matrix through Jacobi eigenpairs.
pub fn psd_pinv(s: &M, rel_tol: f64) -> M {
    let (vals, vecs) = jacobi_eigen(s);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let n = s.nrows();
    let mut out = M::zeros(n, n);
    for (i, &l) in vals.iter().enumerate() {
        if l > rel_tol * top {
            let v = vecs.column(i);
            out += (&v * v.transpose()) / l;
        }
    }
    out
}

// ── Objectives and first-order oracles ──────────────────────────────

/// `‖(W+D)K − V‖² + ‖D·Kp‖² + ridge‖D‖²`.
pub fn edit_objective(w: &M, d: &M, k: &M, v: &M, kp: Option<&M>, ridge: f64) -> f64 {
    let fit = ((w + d) * k - v).norm_squared();
    let prior = kp.map_or(0.0, |kp| (d * kp).norm_squared());
    fit + prior + ridge * d.norm_squared()
}

/// Minimizes [`edit_objective`] over `D = P_out·X·P_in` by projected
/// gradient descent with Nesterov momentum. Identity projectors are passed
/// as `None`.
pub fn projected_gradient(
    w: &M,
    k: &M,
    v: &M,
    kp: Option<&M>,
    ridge: f64,
    p_out: Option<&M>,
    p_in: Option<&M>,
    iters: usize,
) -> M {
    let (rows, cols) = (w.nrows(), w.ncols());
    let project = |g: M| -> M {
        let g = match p_out {
            Some(p) => p * g,
            None => g,
        };
        match p_in {
            Some(p) => g * p,
            None => g,
        }
    };
    // Lipschitz constant of the gradient: 2·(λ_max(KKᵀ + KpKpᵀ) + ridge).
    let mut h = k * k.transpose();
    if let Some(kp) = kp {
        h += kp * kp.transpose();
    }
    let (vals, _) = jacobi_eigen(&h);
    let lmax = vals.iter().cloned().fold(0.0, f64::max);
    let step = 1.0 / (2.0 * (lmax + ridge));

    let grad = |d: &M| -> M {
        let mut g = ((w + d) * k - v) * k.transpose() + ridge * d;
        if let Some(kp) = kp {
            g += d * kp * kp.transpose();
        }
        2.0 * g
    };
    let mut x = M::zeros(rows, cols);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let next = project(&y - step * grad(&y));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + ((t - 1.0) / t_next) * (&next - &x);
        x = next;
        t = t_next;
    }
    x
}

/// `|a − b| / max(|b|, floor)`.
pub fn rel_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}
