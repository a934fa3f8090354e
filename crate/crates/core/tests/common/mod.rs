#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use svrpg::harness::{load_system, LoadedSystem};
use svrpg::{LinearQuadraticSystem, Matrix};

pub fn benchmark_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks/appendix_g.json")
}

pub fn benchmark() -> LoadedSystem {
    load_system(benchmark_path()).expect("bundled benchmark loads")
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = gaussian(rng, n, n, 1.0 / (n as f64).sqrt());
    (&(&g * &g.transpose()) + &Matrix::identity(n).scale(0.1)).symmetrize()
}

/// Random instance with Gaussian `A` (spectral radius roughly 0.5 to 1.5),
/// Gaussian `B`, and SPD `Q`, `R`, `Σ₀`. Gaussian `B` makes `(A, B)`
/// controllable with probability one.
pub fn random_system(seed: u64, n: usize, m: usize) -> LinearQuadraticSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = rng.random_range(0.5..1.5) / (n as f64).sqrt();
    let a = gaussian(&mut rng, n, n, spread);
    let b = gaussian(&mut rng, n, m, 1.0);
    let q = spd(&mut rng, n);
    let r = spd(&mut rng, m);
    let sigma0 = spd(&mut rng, n);
    LinearQuadraticSystem::new(a, b, q, r, sigma0).expect("random instance is valid")
}

/// Dimensions `(n, m)` with `n ≤ max_n`, `m ≤ min(n, max_m)` drawn from `seed`.
pub fn random_dims(seed: u64, max_n: usize, max_m: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=n.min(max_m));
    (n, m)
}

/// A stabilizing gain near `K*`: `K* + δ` with
/// `‖δ‖_F = frac·(1 + ‖K*‖_F)`, shrinking `frac` until stabilizing.
pub fn stabilizing_gain(sys: &LinearQuadraticSystem, kstar: &Matrix, seed: u64, mut frac: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let (m, n) = kstar.shape();
    let dir = gaussian(&mut rng, m, n, 1.0);
    let dir = dir.scale(1.0 / dir.frobenius_norm());
    loop {
        let mut k = kstar.clone();
        k.axpy(frac * (1.0 + kstar.frobenius_norm()), &dir);
        if sys.is_stabilizing(&k).unwrap() {
            return k;
        }
        frac *= 0.5;
    }
}

pub fn relative_error(estimate: &Matrix, truth: &Matrix) -> f64 {
    (estimate - truth).frobenius_norm() / truth.frobenius_norm()
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}
