//! Independent numerical oracles shared by unit tests.

/// Central differences of `f` at `x` along each coordinate in `idx`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], idx: &[usize], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    idx.iter()
        .map(|&i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[track_caller]
pub fn assert_rel_close(actual: f64, expected: f64, rel: f64, floor: f64) {
    let e = rel_err(actual, expected, floor.max(f64::MIN_POSITIVE));
    assert!(e <= rel, "actual {actual} expected {expected} rel err {e} > {rel}");
}

/// Central difference at `h`, or `None` when it disagrees with the one at
/// `h / 2`: a ReLU, pooling or abs kink inside `[x - h, x + h]` makes the
/// function non-differentiable across the stencil.
pub fn kink_free_difference(f: &impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> Option<f64> {
    let full = central_difference(f, x, &[i], h)[0];
    let half = central_difference(f, x, &[i], h / 2.0)[0];
    let scale = full.abs().max(half.abs()).max(1e-9);
    ((full - half).abs() <= 1e-4 * scale).then_some(full)
}

/// Checks `analytic` against kink-free central differences on `count` random
/// coordinates of `x`; returns the worst relative error.
pub fn gradient_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], count: usize, h: f64, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut skipped, mut worst) = (0, 0, 0f64);
    while checked < count {
        let i = rng.gen_range(0..x.len());
        match kink_free_difference(&f, x, i, h) {
            Some(n) => {
                worst = worst.max(rel_err(analytic[i], n, 1e-6));
                checked += 1;
            }
            None => {
                skipped += 1;
                assert!(skipped <= count, "too many kinked coordinates");
            }
        }
    }
    worst
}
