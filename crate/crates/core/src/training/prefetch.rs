use std::sync::mpsc::sync_channel;
use std::thread;

/// Runs `jobs` on a producer thread at most `capacity` results ahead of
/// `consume`, preserving order. Stops at the first error from `consume`.
pub fn prefetch<J, T, E, I, C>(capacity: usize, jobs: I, mut consume: C) -> Result<(), E>
where
    I: IntoIterator<Item = J>,
    I::IntoIter: Send,
    J: FnOnce() -> T + Send,
    T: Send,
    C: FnMut(usize, T) -> Result<(), E>,
{
    let jobs = jobs.into_iter();
    let (tx, rx) = sync_channel(capacity.max(1));
    thread::scope(|scope| {
        scope.spawn(move || {
            for job in jobs {
                if tx.send(job()).is_err() {
                    break;
                }
            }
        });
        // Dropping `rx` on early return unblocks the producer.
        for (i, item) in rx.into_iter().enumerate() {
            consume(i, item)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let mut seen = Vec::new();
        prefetch(2, (0..50).map(|i| move || i * i), |_, v| {
            seen.push(v);
            Ok::<(), ()>(())
        })
        .unwrap();
        assert_eq!(seen, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn early_error_stops_the_producer() {
        let r = prefetch(1, (0..1000).map(|i| move || i), |i, _| if i == 3 { Err(i) } else { Ok(()) });
        assert_eq!(r, Err(3));
    }
}
