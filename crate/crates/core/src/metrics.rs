//! Relative pose error between consecutive nodes and its empirical CDF.

use crate::error::{Error, Result};
use crate::manifold::Pose;

/// Error of the relative pose from node `index − 1` to node `index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRecord {
    pub index: usize,
    pub translation: f64,
    pub rotation: f64,
}

const TIME_TOLERANCE: f64 = 1e-9;

/// Compares consecutive relative poses of `estimate` against `truth`; both
/// are `(timestamp, pose)` lists over the same nodes.
pub fn compute_relative_errors(estimate: &[(f64, Pose)], truth: &[(f64, Pose)]) -> Result<Vec<ErrorRecord>> {
    if estimate.len() != truth.len() {
        let t = estimate
            .iter()
            .zip(truth)
            .find(|(a, b)| (a.0 - b.0).abs() > TIME_TOLERANCE)
            .map_or_else(|| estimate.get(truth.len()).map_or(f64::NAN, |e| e.0), |(a, _)| a.0);
        return Err(Error::TimestampMismatch(t));
    }
    for (a, b) in estimate.iter().zip(truth) {
        if (a.0 - b.0).abs() > TIME_TOLERANCE {
            return Err(Error::TimestampMismatch(a.0));
        }
    }
    Ok((1..estimate.len())
        .map(|j| {
            let est = estimate[j - 1].1.between(&estimate[j].1);
            let tru = truth[j - 1].1.between(&truth[j].1);
            ErrorRecord {
                index: j,
                translation: (est.translation - tru.translation).norm(),
                rotation: (tru.rotation.transpose() * est.rotation).angle(),
            }
        })
        .collect())
}

/// `(threshold, fraction ≤ threshold)` at every distinct error value.
pub fn compute_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, &x) in sorted.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// Median (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{exp_so3, Rotation};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn track() -> Vec<(f64, Pose)> {
        (0..6)
            .map(|k| {
                let t = k as f64 * 0.3;
                (
                    t,
                    Pose::new(
                        exp_so3(&Vector3::new(0.1 * t, -0.05, 0.4 * t)),
                        Vector3::new(t, t * t, 0.2),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn identical_is_zero() {
        let t = track();
        for e in compute_relative_errors(&t, &t).unwrap() {
            assert_eq!(e.translation, 0.0);
            assert_eq!(e.rotation, 0.0);
        }
    }

    #[test]
    fn gauge_invariant() {
        let t = track();
        let g = Pose::new(exp_so3(&Vector3::new(0.3, -1.0, 2.0)), Vector3::new(5.0, -3.0, 1.0));
        let moved: Vec<_> = t.iter().map(|(s, p)| (*s, g.compose(p))).collect();
        for e in compute_relative_errors(&moved, &t).unwrap() {
            assert!(e.translation < 1e-12);
            assert!(e.rotation < 1e-7);
        }
    }

    #[test]
    fn single_yaw_offset() {
        let t = track();
        let mut est = t.clone();
        let j = 3;
        est[j].1.rotation = est[j].1.rotation * Rotation::about_z(0.1);
        let errs = compute_relative_errors(&est, &t).unwrap();
        for e in &errs {
            if e.index == j || e.index == j + 1 {
                assert!((e.rotation - 0.1).abs() < 1e-12);
            } else {
                assert!(e.rotation < 1e-7);
            }
        }
    }

    #[test]
    fn timestamp_mismatch() {
        let t = track();
        let mut est = t.clone();
        est[2].0 += 0.01;
        assert!(matches!(
            compute_relative_errors(&est, &t),
            Err(Error::TimestampMismatch(_))
        ));
        assert!(matches!(
            compute_relative_errors(&t[..3], &t),
            Err(Error::TimestampMismatch(_))
        ));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(compute_cdf(&[1.0, 1.0, 1.0]).unwrap(), vec![(1.0, 1.0)]);
        assert_eq!(
            compute_cdf(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]
        );
        assert!(matches!(compute_cdf(&[]), Err(Error::EmptyInput)));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn cdf_monotone_and_permutation_invariant(mut xs in prop::collection::vec(0.0f64..10.0, 1..50), seed in any::<u64>()) {
            let a = compute_cdf(&xs).unwrap();
            prop_assert!(a.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
            prop_assert_eq!(a.last().unwrap().1, 1.0);
            let n = xs.len();
            xs.rotate_left((seed as usize) % n);
            xs.reverse();
            prop_assert_eq!(compute_cdf(&xs).unwrap(), a);
        }
    }
}
