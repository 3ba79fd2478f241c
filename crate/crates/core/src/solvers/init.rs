use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mle, project_theta, SolverConfig};
use crate::error::{Error, Result};
use crate::mixture::MixingDistribution;
use crate::model::{CovarianceFamily, PanelDataset, PanelUnit};

/// Redraws allowed per atom when a subsample has no MLE.
const MAX_REDRAWS: usize = 1000;

/// `m` atoms, each the MLE over `B` units drawn uniformly with replacement,
/// with uniform weights. Draws come from `ChaCha8Rng::seed_from_u64(seed)`.
pub fn init_subsample_mle(
    data: &PanelDataset,
    config: &SolverConfig,
    family: CovarianceFamily,
) -> Result<MixingDistribution> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = data.len();
    let mut atoms = Vec::with_capacity(config.m);
    let mut last_err = None;
    for _ in 0..config.m {
        let mut found = None;
        for _ in 0..MAX_REDRAWS {
            let idx: Vec<usize> = (0..config.init_b).map(|_| rng.random_range(0..n)).collect();
            let fit = if config.init_b == 1 {
                mle::individual_mle(&data.units[idx[0]], &config.bounds, family)
            } else {
                let units: Vec<&PanelUnit> = idx.iter().map(|i| &data.units[*i]).collect();
                mle::weighted_mle(&units, &vec![1.0; units.len()], &config.bounds, family)
            };
            match fit {
                Ok(t) => {
                    found = Some(project_theta(&t, &config.bounds));
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        match found {
            Some(t) => atoms.push(t),
            None => {
                return Err(last_err.unwrap_or_else(|| Error::InvalidData("no subsample MLE found".into())))
            }
        }
    }
    MixingDistribution::uniform(atoms)
}
