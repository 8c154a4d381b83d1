use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Sample, SplitConfig, SplitTag};

/// Seeded train/test partition. Samples are first sorted by id so the result
/// does not depend on input order.
pub fn split(
    mut samples: Vec<Sample>,
    cfg: &SplitConfig,
) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    cfg.validate()?;
    if samples.len() != cfg.total {
        return Err(DataError::CountMismatch {
            expected: cfg.total,
            found: samples.len(),
        });
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut test = samples.split_off(cfg.train_count);
    for s in &mut samples {
        s.split = Some(SplitTag::Train);
    }
    for s in &mut test {
        s.split = Some(SplitTag::Test);
    }
    Ok((samples, test))
}
