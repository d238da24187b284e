//! Untransformed benchmark functions in their usual minimization form.
//!
//! Each function takes the already-translated point `z`. Callers negate the
//! result to obtain the maximization convention.

use std::f64::consts::PI;

pub fn sphere(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// Minimum 0 at the origin.
pub fn rastrigin(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    10.0 * d
        + z.iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
            .sum::<f64>()
}

/// Minimum 0 at (1, ..., 1). Requires at least two coordinates.
pub fn rosenbrock(z: &[f64]) -> f64 {
    z.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

/// Sharp ridge without rotation: `z1^2 + 100 * ||z_{2..d}||`. Minimum 0 at the origin.
pub fn sharp_ridge(z: &[f64]) -> f64 {
    let tail: f64 = z[1..].iter().map(|v| v * v).sum();
    z[0] * z[0] + 100.0 * tail.sqrt()
}

/// Composite Griewank-Rosenbrock (F8F2) on the raw coordinates. Minimum 0 at (1, ..., 1).
pub fn griewank_rosenbrock(z: &[f64]) -> f64 {
    let d = z.len();
    let sum: f64 = z
        .windows(2)
        .map(|w| {
            let s = 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2);
            s / 4000.0 - s.cos()
        })
        .sum();
    10.0 * sum / (d - 1) as f64 + 10.0
}

/// Lunacek bi-Rastrigin without rotation or conditioning. Minimum 0 at (1.25, ..., 1.25).
pub fn lunacek(z: &[f64]) -> f64 {
    const MU0: f64 = 2.5;
    let d = z.len() as f64;
    let s = 1.0 - 1.0 / (2.0 * (d + 20.0).sqrt() - 8.2);
    let mu1 = -((MU0 * MU0 - 1.0) / s).sqrt();
    let (mut sq0, mut sq1, mut cos_sum) = (0.0, 0.0, 0.0);
    for &v in z {
        let xh = 2.0 * v;
        sq0 += (xh - MU0).powi(2);
        sq1 += (xh - mu1).powi(2);
        cos_sum += (2.0 * PI * (xh - MU0)).cos();
    }
    sq0.min(d + s * sq1) + 10.0 * (d - cos_sum)
}

/// Two-parameter Branin on its canonical box `[-5, 10] x [0, 15]`.
/// Global minimum 0.397887 at (-pi, 12.275), (pi, 2.275) and (9.42478, 2.475).
pub fn branin(z: &[f64]) -> f64 {
    let (x1, x2) = (z[0], z[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}
