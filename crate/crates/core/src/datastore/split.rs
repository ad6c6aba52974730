use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Trajectory-level partition into training, calibration and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Randomly partitions `0..n_traj` by `ratios = (train, cal, test)`.
pub fn split(n_traj: usize, ratios: [f64; 3], seed: u64) -> Result<SplitIndex> {
    if ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive: {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1: {ratios:?}")));
    }
    let n_train = (n_traj as f64 * ratios[0]).round() as usize;
    let n_cal = (n_traj as f64 * ratios[1]).round() as usize;
    let n_test = n_traj.saturating_sub(n_train + n_cal);
    if n_train == 0 || n_cal == 0 || n_test == 0 || n_train + n_cal > n_traj {
        return Err(Error::Config(format!(
            "split of {n_traj} trajectories by {ratios:?} leaves an empty part \
             ({n_train}/{n_cal}/{n_test})"
        )));
    }
    let mut perm: Vec<usize> = (0..n_traj).collect();
    perm.shuffle(&mut stream(seed, &[tag::SPLIT]));
    let test = perm.split_off(n_train + n_cal);
    let cal = perm.split_off(n_train);
    Ok(SplitIndex {
        train: perm,
        cal,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_trajectories_split_six_two_two() {
        let s = split(10, [0.6, 0.2, 0.2], 0).unwrap();
        assert_eq!((s.train.len(), s.cal.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(split(50, [0.6, 0.2, 0.2], 9).unwrap(), split(50, [0.6, 0.2, 0.2], 9).unwrap());
        assert_ne!(split(50, [0.6, 0.2, 0.2], 9).unwrap(), split(50, [0.6, 0.2, 0.2], 10).unwrap());
    }

    #[test]
    fn empty_part_is_a_configuration_error() {
        assert!(matches!(split(3, [0.8, 0.1, 0.1], 0), Err(Error::Config(_))));
        assert!(matches!(split(10, [0.6, 0.2, 0.3], 0), Err(Error::Config(_))));
        assert!(matches!(split(10, [1.0, 0.0, 0.0], 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn partition_covers_every_index_once(n in 3usize..400, a in 0.05f64..0.9, b in 0.05f64..0.9, seed: u64) {
            let rest = 1.0 - a;
            prop_assume!(b < rest - 0.01);
            let ratios = [a, b, rest - b];
            if let Ok(s) = split(n, ratios, seed) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.cal).chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
