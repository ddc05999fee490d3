use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One epoch of category-balanced mini-batches, as row indices.
///
/// Every batch holds `⌊B/K'⌋` or `⌈B/K'⌉` rows of each of the `K'` categories
/// present, with the larger quotas rotating across batches. Each category is
/// walked in a fresh random order; once exhausted it is sampled with replacement.
/// The epoch has `⌈N/B⌉` batches.
pub fn balanced_batches<R: Rng + ?Sized>(
    categories: &[usize],
    num_categories: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < num_categories || batch_size == 0 {
        return Err(Error::BatchSmallerThanK {
            batch: batch_size,
            categories: num_categories,
        });
    }
    if categories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_categories];
    for (i, &c) in categories.iter().enumerate() {
        if c >= num_categories {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: num_categories,
            });
        }
        pools[c].push(i);
    }
    let mut pools: Vec<Vec<usize>> = pools.into_iter().filter(|p| !p.is_empty()).collect();
    for p in &mut pools {
        p.shuffle(rng);
    }
    let kp = pools.len();
    let base = batch_size / kp;
    let extra = batch_size % kp;
    let mut cursors = vec![0usize; kp];
    let num_batches = categories.len().div_ceil(batch_size);
    let mut batches = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let start = (b * extra) % kp;
        let mut batch = Vec::with_capacity(batch_size);
        for (j, pool) in pools.iter().enumerate() {
            let take = base + usize::from((j + kp - start) % kp < extra);
            for _ in 0..take {
                if cursors[j] < pool.len() {
                    batch.push(pool[cursors[j]]);
                    cursors[j] += 1;
                } else {
                    batch.push(pool[rng.random_range(0..pool.len())]);
                }
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// One epoch of single-category mini-batches: every category is shuffled and cut
/// into chunks of `B` rows (a trailing single row joins the previous chunk), and
/// the chunks of all categories are visited in random order.
pub fn per_category_batches<R: Rng + ?Sized>(
    categories: &[usize],
    num_categories: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::BatchSmallerThanK {
            batch: batch_size,
            categories: num_categories,
        });
    }
    if categories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_categories];
    for (i, &c) in categories.iter().enumerate() {
        if c >= num_categories {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: num_categories,
            });
        }
        pools[c].push(i);
    }
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for mut pool in pools {
        pool.shuffle(rng);
        let mut chunks: Vec<Vec<usize>> = pool.chunks(batch_size).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            let tail = chunks.pop().expect("non-empty");
            chunks.last_mut().expect("non-empty").extend(tail);
        }
        batches.extend(chunks);
    }
    batches.shuffle(rng);
    Ok(batches)
}
