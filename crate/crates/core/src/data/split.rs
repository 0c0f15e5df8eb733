use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_SPLIT};

/// Shares of the labeled training part, the unlabeled part and the test part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions(pub f64, pub f64, pub f64);

impl Default for Fractions {
    fn default() -> Self {
        Fractions(0.6, 0.2, 0.2)
    }
}

const PARTS: [&str; 3] = ["train", "unlabeled", "test"];

/// Stratified shuffle split of row indices by group. Within each group the
/// first two parts get `round(f * n_g)` rows and the test part the rest.
/// Every part keeps the original row order.
pub fn split_indices(
    groups: &[usize],
    k: usize,
    f: Fractions,
    seed: u64,
) -> Result<[Vec<usize>; 3]> {
    let Fractions(a, b, c) = f;
    if [a, b, c].iter().any(|&x| !(0.0..=1.0).contains(&x)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "fractions",
            format!("({a}, {b}, {c}) must be nonnegative and sum to 1"),
        ));
    }
    let mut by_group = vec![Vec::new(); k];
    for (i, &g) in groups.iter().enumerate() {
        if g >= k {
            return Err(Error::GroupOutOfRange { group: g, k });
        }
        by_group[g].push(i);
    }
    let mut rng = stream_rng(seed, STREAM_SPLIT);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (g, rows) in by_group.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        let n = rows.len();
        let n0 = ((a * n as f64).round() as usize).min(n);
        let n1 = ((b * n as f64).round() as usize).min(n - n0);
        let cuts = [&rows[..n0], &rows[n0..n0 + n1], &rows[n0 + n1..]];
        for (p, cut) in cuts.iter().enumerate() {
            if cut.is_empty() {
                return Err(Error::EmptyPartition {
                    part: PARTS[p],
                    group: g,
                });
            }
            parts[p].extend_from_slice(cut);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_rows_split_six_two_two() {
        let [a, b, c] = split_indices(&[0; 10], 1, Fractions::default(), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_stratified() {
        let groups: Vec<usize> = (0..103).map(|i| usize::from(i % 3 == 0)).collect();
        let x = split_indices(&groups, 2, Fractions::default(), 5).unwrap();
        assert_eq!(
            x,
            split_indices(&groups, 2, Fractions::default(), 5).unwrap()
        );
        let y = split_indices(&groups, 2, Fractions::default(), 6).unwrap();
        assert_ne!(x, y);
        for part in 0..3 {
            for g in 0..2 {
                let cx = x[part].iter().filter(|&&i| groups[i] == g).count() as i64;
                let cy = y[part].iter().filter(|&&i| groups[i] == g).count() as i64;
                assert!((cx - cy).abs() <= 1);
            }
        }
    }

    #[test]
    fn small_groups_and_bad_fractions() {
        let r = split_indices(&[0, 0, 0, 0, 0, 1, 1], 2, Fractions::default(), 1);
        assert!(matches!(r, Err(Error::EmptyPartition { group: 1, .. })));
        assert!(split_indices(&[0; 10], 1, Fractions(0.5, 0.2, 0.2), 1).is_err());
    }
}
