//! Brute-force reference computations shared by the integration tests.

/// Mann-Whitney statistic by explicit pair counting: P(member > nonmember)
/// with ties counting one half.
pub fn brute_force_auc(members: &[f64], nonmembers: &[f64]) -> f64 {
    let mut wins = 0.0;
    for m in members {
        for n in nonmembers {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    wins / (members.len() * nonmembers.len()) as f64
}

/// Central finite difference of `f` at `x` along each coordinate.
pub fn finite_difference_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += step;
            minus[i] -= step;
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
        .collect()
}
