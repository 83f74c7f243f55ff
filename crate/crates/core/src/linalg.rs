//! Small dense linear algebra helpers (row-major storage).

/// Inverts the `n x n` row-major matrix `a` by Gauss-Jordan elimination with
/// partial pivoting. Returns `None` when a pivot falls below `pivot_tol`.
pub fn invert(a: &[f64], n: usize, pivot_tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= pivot_tol {
            return None;
        }
        if piv != col {
            swap_rows(&mut m, n, piv, col);
            swap_rows(&mut inv, n, piv, col);
        }
        let d = 1.0 / m[col * n + col];
        for k in 0..n {
            m[col * n + k] *= d;
            inv[col * n + k] *= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                m[r * n + k] -= f * m[col * n + k];
                inv[r * n + k] -= f * inv[col * n + k];
            }
        }
    }
    Some(inv)
}

/// Finds a maximal set of independent columns of a square row-major `a` by
/// LU with partial pivoting in column order. Returns the dependent columns
/// and the rows left without a pivot; both lists have the same length.
pub fn dependent_columns(a: &[f64], n: usize, pivot_tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut m = a.to_vec();
    let mut used = vec![false; n];
    let mut dependent = Vec::new();
    for col in 0..n {
        let mut piv = None;
        let mut best = pivot_tol;
        for r in 0..n {
            if !used[r] && m[r * n + col].abs() > best {
                best = m[r * n + col].abs();
                piv = Some(r);
            }
        }
        let Some(p) = piv else {
            dependent.push(col);
            continue;
        };
        used[p] = true;
        let d = m[p * n + col];
        for r in 0..n {
            if used[r] {
                continue;
            }
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[p * n + k];
            }
        }
    }
    let free = (0..n).filter(|&r| !used[r]).collect();
    (dependent, free)
}

/// Solves `a x = b` for a square row-major `a` by LU with partial pivoting.
pub fn solve(a: &[f64], n: usize, b: &[f64], pivot_tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= pivot_tol {
            return None;
        }
        if piv != col {
            swap_rows(&mut m, n, piv, col);
            x.swap(piv, col);
        }
        let d = m[col * n + col];
        for r in (col + 1)..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            m[r * n + col] = 0.0;
            for k in (col + 1)..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in (col + 1)..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

fn swap_rows(m: &mut [f64], n: usize, a: usize, b: usize) {
    for k in 0..n {
        m.swap(a * n + k, b * n + k);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
