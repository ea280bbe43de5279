#![allow(dead_code)]

/// `E[g(Z)]` for a standard normal `Z` by the trapezoid rule on [-12, 12].
pub fn gaussian_expectation(g: impl Fn(f64) -> f64) -> f64 {
    let h = 0.005;
    let steps = (24.0 / h) as i64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    (0..=steps)
        .map(|i| {
            let z = -12.0 + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            w * g(z) * norm * (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * h
}

/// Dense Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// `E[f_m sqrt(f_n)]`, `m >= n`, by quadrature over the two independent
/// Gaussian increments.
pub fn cross_moment_by_quadrature(f0: f64, mu: f64, sigma: f64, m: usize, n: usize, dt: f64) -> f64 {
    let drift = mu - 0.5 * sigma * sigma;
    let (early, late) = (n as f64 * dt, (m - n) as f64 * dt);
    let first = gaussian_expectation(|z| (1.5 * (drift * early + sigma * early.sqrt() * z)).exp());
    let second = gaussian_expectation(|z| (drift * late + sigma * late.sqrt() * z).exp());
    f0.powf(1.5) * first * second
}

pub fn mean_by_quadrature(f0: f64, mu: f64, sigma: f64, t: f64) -> f64 {
    f0 * gaussian_expectation(|z| ((mu - 0.5 * sigma * sigma) * t + sigma * t.sqrt() * z).exp())
}

/// Maximizes `B'delta - delta'A delta / L` subject to `sum(delta) = xi` by
/// substituting `delta_N = xi - sum_{n<N} delta_n` and solving the reduced
/// unconstrained normal equations.
pub fn brute_force_schedule(f0: f64, mu: f64, sigma: f64, kernels: &[(f64, f64)], steps: usize, xi: f64, l: f64) -> Vec<f64> {
    let dt = 1.0 / steps as f64;
    let size = steps + 1;
    let mut a = vec![vec![0.0; size]; size];
    for m in 0..size {
        for n in 0..=m {
            let resilience: f64 = kernels.iter().map(|(w, r)| w * (-r * (m - n) as f64 * dt).exp()).sum();
            let v = resilience * cross_moment_by_quadrature(f0, mu, sigma, m, n, dt);
            a[m][n] = v;
            a[n][m] = v;
        }
    }
    let b: Vec<f64> = (0..size).map(|m| mean_by_quadrature(f0, mu, sigma, m as f64 * dt)).collect();
    let last = steps;
    // objective in z = delta[0..N]: gradient zero gives
    // (P'AP) z = (L/2) P'B - xi P'A e_N with P = [I; -1']
    let reduced: Vec<Vec<f64>> = (0..last)
        .map(|i| (0..last).map(|j| a[i][j] - a[i][last] - a[last][j] + a[last][last]).collect())
        .collect();
    let rhs: Vec<f64> = (0..last)
        .map(|i| 0.5 * l * (b[i] - b[last]) - xi * (a[i][last] - a[last][last]))
        .collect();
    let mut z = if last == 0 { Vec::new() } else { solve_dense(reduced, rhs) };
    let tail = xi - z.iter().sum::<f64>();
    z.push(tail);
    z
}
