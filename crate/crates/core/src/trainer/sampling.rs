use rand::Rng;

use crate::error::{Error, Result};

/// Uniform draw from `0..n` excluding `anchor`.
pub fn sample_negative_index<R: Rng + ?Sized>(rng: &mut R, anchor: usize, n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::Data(format!(
            "negative sampling needs at least 2 items, catalog has {n}"
        )));
    }
    if anchor >= n {
        return Err(Error::Contract(format!("anchor {anchor} outside catalog of {n}")));
    }
    let j = rng.gen_range(0..n - 1);
    Ok(if j >= anchor { j + 1 } else { j })
}

/// A uniformly chosen item of `catalog` other than `catalog[anchor]`.
pub fn sample_negative<'a, T, R: Rng + ?Sized>(rng: &mut R, anchor: usize, catalog: &'a [T]) -> Result<&'a T> {
    Ok(&catalog[sample_negative_index(rng, anchor, catalog.len())?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn forced_choice_and_errors() {
        let mut rng = stream(1, &[]);
        for _ in 0..20 {
            assert_eq!(*sample_negative(&mut rng, 0, &["a", "b"]).unwrap(), "b");
        }
        assert!(matches!(sample_negative(&mut rng, 0, &["a"]), Err(Error::Data(_))));
    }

    #[test]
    fn uniform_over_non_anchors() {
        let mut rng = stream(2, &[]);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[sample_negative_index(&mut rng, 2, 5).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        for (i, &c) in counts.iter().enumerate().filter(|(i, _)| *i != 2) {
            assert!((2350..=2650).contains(&c), "index {i}: {c}");
        }
    }
}
