use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoundError {
    #[error("leaders per round must be in [1, 3f+1]")]
    LeadersOutOfRange,
    #[error("bound is only known for wave lengths 4 and 5, got {0}")]
    UnsupportedWave(u64),
}

/// Lower bound on the probability that a wave directly commits at least one
/// of its leader slots, with `f` Byzantine validators out of `3f+1` and `l`
/// leaders per round.
///
/// Five-round waves: `1` when `l > f`, else `1 - C(f, l) / C(3f+1, l)`.
/// Four-round waves: `1` when `l = 3f+1`, else `l / (3f+1)`.
pub fn direct_commit_lower_bound(f: usize, l: usize, wave_length: u64) -> Result<f64, BoundError> {
    let n = 3 * f + 1;
    if l == 0 || l > n {
        return Err(BoundError::LeadersOutOfRange);
    }
    match wave_length {
        5 if l > f => Ok(1.0),
        5 => {
            // C(f, l) / C(n, l) = prod_{i<l} (f - i) / (n - i)
            let ratio: f64 = (0..l).map(|i| (f - i) as f64 / (n - i) as f64).product();
            Ok(1.0 - ratio)
        }
        4 if l == n => Ok(1.0),
        4 => Ok(l as f64 / n as f64),
        other => Err(BoundError::UnsupportedWave(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choose(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn matches_binomial_evaluation() {
        for f in 0..6usize {
            let n = 3 * f + 1;
            for l in 1..=n {
                let expected = if l > f {
                    1.0
                } else {
                    1.0 - choose(f as u64, l as u64) as f64 / choose(n as u64, l as u64) as f64
                };
                let got = direct_commit_lower_bound(f, l, 5).unwrap();
                assert!((got - expected).abs() < 1e-12, "f={f} l={l}");
            }
        }
    }

    #[test]
    fn reference_points() {
        assert_eq!(direct_commit_lower_bound(1, 2, 5), Ok(1.0));
        assert_eq!(direct_commit_lower_bound(1, 1, 5), Ok(0.75));
        assert_eq!(direct_commit_lower_bound(1, 1, 4), Ok(0.25));
        assert_eq!(direct_commit_lower_bound(1, 4, 4), Ok(1.0));
        assert!((direct_commit_lower_bound(3, 1, 5).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(
            direct_commit_lower_bound(1, 0, 5),
            Err(BoundError::LeadersOutOfRange)
        );
        assert_eq!(
            direct_commit_lower_bound(1, 5, 5),
            Err(BoundError::LeadersOutOfRange)
        );
        assert_eq!(
            direct_commit_lower_bound(1, 1, 3),
            Err(BoundError::UnsupportedWave(3))
        );
    }
}
