use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One epoch of shuffled index batches over `len` samples. The last batch
/// may be short.
pub fn batch_iter(len: usize, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::config(format!(
            "batch size {batch_size} must be at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
