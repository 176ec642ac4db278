//! Deterministic parallel reductions over ensemble members.

use rayon::prelude::*;

const CHUNK: usize = 8;

/// Runs members `0..n` and sums their accumulator contributions.
///
/// `f(i, acc)` adds member `i`'s contribution into `acc` (length `len`) and
/// returns a per-member value. Members are grouped into fixed chunks and the
/// chunk partials are combined in index order, so both the sums and the
/// returned list are bit-identical for any thread count.
pub fn ordered_fold<T, F>(n: usize, len: usize, f: F) -> (Vec<f64>, Vec<T>)
where
    F: Fn(usize, &mut [f64]) -> T + Sync,
    T: Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<(Vec<f64>, Vec<T>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            let items = (c * CHUNK..((c + 1) * CHUNK).min(n)).map(|i| f(i, &mut acc)).collect();
            (acc, items)
        })
        .collect();
    let mut total = vec![0.0; len];
    let mut items = Vec::with_capacity(n);
    for (acc, chunk_items) in partials {
        for (t, v) in total.iter_mut().zip(acc) {
            *t += v;
        }
        items.extend(chunk_items);
    }
    (total, items)
}

/// [`ordered_fold`] for members that can fail; the first error (by index)
/// is returned.
pub fn ordered_sum<F, E>(n: usize, len: usize, f: F) -> Result<Vec<f64>, E>
where
    F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync,
    E: Send,
{
    let (total, items) = ordered_fold(n, len, f);
    items.into_iter().collect::<Result<Vec<()>, E>>()?;
    Ok(total)
}

/// Runs `f` inside a pool of `workers` threads, or the global pool for
/// `None`.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_of_pool_size() {
        let work = |i: usize, acc: &mut [f64]| -> Result<(), ()> {
            acc[0] += (i as f64 * 0.37).sin() / 3.0;
            acc[1] += 1.0 / (1.0 + i as f64);
            Ok(())
        };
        let run = |threads| with_workers(Some(threads), || ordered_sum(1001, 2, work));
        let a = run(1).unwrap();
        assert_eq!(a, run(4).unwrap());
        assert_eq!(a[1].to_bits(), run(3).unwrap()[1].to_bits());
    }

    #[test]
    fn items_come_back_in_order() {
        let (_, items) = with_workers(Some(3), || ordered_fold(50, 0, |i, _| i * i));
        assert_eq!(items, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn propagates_errors() {
        let r = ordered_sum(20, 1, |i, _| if i == 13 { Err(i) } else { Ok(()) });
        assert_eq!(r, Err(13));
    }
}
