/// Central-difference gradient `(f(x + h e_k) - f(x - h e_k)) / 2h` for each
/// coordinate `k`.
pub fn finite_difference_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    (0..point.len())
        .map(|k| {
            x[k] = point[k] + step;
            let plus = f(&x);
            x[k] = point[k] - step;
            let minus = f(&x);
            x[k] = point[k];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}
