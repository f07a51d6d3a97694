use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::derive_seed;
use crate::error::{Error, Result};

/// Row indices for one epoch, shuffled with `(seed, epoch)`.
///
/// With `drop_last` the trailing partial batch is discarded; otherwise it is
/// kept only if it has at least two rows (contrastive losses need a negative).
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid(format!("batch size must be ≥ 2, got {batch_size}")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples to batch, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4, epoch as u64])));
    Ok(order
        .chunks(batch_size)
        .filter(|c| if drop_last { c.len() == batch_size } else { c.len() >= 2 })
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_last_and_coverage() {
        let b = make_batches(10, 4, 1, 0, true).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|c| c.len() == 4));
        let mut all: Vec<usize> = make_batches(10, 4, 1, 0, false).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // a lone trailing row is never emitted
        assert_eq!(make_batches(9, 4, 1, 0, false).unwrap().concat().len(), 8);
    }

    #[test]
    fn seeded_per_epoch() {
        assert_eq!(make_batches(20, 5, 3, 1, true).unwrap(), make_batches(20, 5, 3, 1, true).unwrap());
        assert_ne!(make_batches(20, 5, 3, 1, true).unwrap(), make_batches(20, 5, 3, 2, true).unwrap());
        assert!(make_batches(20, 1, 3, 1, true).is_err());
    }
}
