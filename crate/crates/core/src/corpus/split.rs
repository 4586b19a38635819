use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

const SPLIT_STREAM: u64 = 0x5f11;

/// Seeded `(train, test)` partition with `round_half_up(fraction · n)` test
/// items. Both sides keep the input's relative order.
pub fn split_holdout<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let n = items.len();
    let n_test = holdout_size(n, fraction);
    if n_test == 0 || n_test == n {
        return Err(Error::Data(format!(
            "holdout of {fraction} over {n} items leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, &[SPLIT_STREAM]));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (item, t) in items.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}

pub fn holdout_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = split_holdout(&items, 0.3, 4).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(split_holdout(&items, 0.3, 4).unwrap(), (train.clone(), test.clone()));
        let mut all = [train, test].concat();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(holdout_size(5, 0.3), 2); // 1.5 rounds up
        assert!(matches!(split_holdout(&[1, 2], 0.1, 0), Err(Error::Data(_))));
        assert!(split_holdout(&items, 1.0, 0).is_err());
    }
}
