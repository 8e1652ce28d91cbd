//! Gene samplers: uniform draws for supernet training and search
//! initialization, plus the crossover/mutation operators of the evolution.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nas::space::{ArchitectureGene, SearchSpace};
use crate::nas::NasError;

/// One option per block, uniform and independent, in block-list order.
pub fn sample_uniform(space: &SearchSpace, rng: &mut ChaCha8Rng) -> ArchitectureGene {
    let mut choices = BTreeMap::new();
    for b in &space.blocks {
        choices.insert(b.block_id.clone(), rng.random_range(0..b.num_options()));
    }
    ArchitectureGene { choices }
}

/// Uniform per-block parent pick. Both parents must belong to `space`.
pub fn crossover(
    space: &SearchSpace,
    a: &ArchitectureGene,
    b: &ArchitectureGene,
    rng: &mut ChaCha8Rng,
) -> Result<ArchitectureGene, NasError> {
    a.validate(space)?;
    b.validate(space)?;
    let mut choices = BTreeMap::new();
    for blk in &space.blocks {
        let from_a: bool = rng.random();
        let src = if from_a { a } else { b };
        choices.insert(blk.block_id.clone(), src.choices[&blk.block_id]);
    }
    Ok(ArchitectureGene { choices })
}

/// Independently resample each block with probability `prob`; the fresh draw
/// may coincide with the parent's option.
pub fn mutate(
    space: &SearchSpace,
    parent: &ArchitectureGene,
    prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ArchitectureGene, NasError> {
    assert!((0.0..=1.0).contains(&prob), "mutation probability {prob} outside [0, 1]");
    parent.validate(space)?;
    let mut choices = BTreeMap::new();
    for blk in &space.blocks {
        let keep = parent.choices[&blk.block_id];
        let pick = if rng.random::<f64>() < prob {
            rng.random_range(0..blk.num_options())
        } else {
            keep
        };
        choices.insert(blk.block_id.clone(), pick);
    }
    Ok(ArchitectureGene { choices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const DRAWS: usize = 10_000;

    fn three_sigma(p: f64) -> f64 {
        3.0 * (p * (1.0 - p) / DRAWS as f64).sqrt()
    }

    #[test]
    fn uniform_samples_hit_every_option_at_its_share() {
        let space = SearchSpace::reduced();
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let mut counts: BTreeMap<(String, usize), usize> = BTreeMap::new();
        for _ in 0..DRAWS {
            let g = sample_uniform(&space, &mut rng);
            g.validate(&space).unwrap();
            for (blk, idx) in &g.choices {
                *counts.entry((blk.clone(), *idx)).or_default() += 1;
            }
        }
        for b in &space.blocks {
            let p = 1.0 / b.num_options() as f64;
            for idx in 0..b.num_options() {
                let n = counts.get(&(b.block_id.clone(), idx)).copied().unwrap_or(0);
                let freq = n as f64 / DRAWS as f64;
                assert!(
                    (freq - p).abs() <= three_sigma(p),
                    "{} option {idx}: frequency {freq} for p {p}",
                    b.block_id
                );
            }
        }
    }

    #[test]
    fn crossover_picks_each_parent_half_the_time() {
        let space = SearchSpace::reduced();
        let mut rng = ChaCha8Rng::seed_from_u64(405);
        // parents disagree on every block, so the source is observable
        let mut a = space.full_width_gene();
        let mut b = space.full_width_gene();
        for blk in &space.blocks {
            a.choices.insert(blk.block_id.clone(), 0);
            b.choices.insert(blk.block_id.clone(), blk.num_options() - 1);
        }
        let mut from_a: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..DRAWS {
            let child = crossover(&space, &a, &b, &mut rng).unwrap();
            child.validate(&space).unwrap();
            for blk in &space.blocks {
                if child.choices[&blk.block_id] == 0 {
                    *from_a.entry(blk.block_id.clone()).or_default() += 1;
                }
            }
        }
        for blk in &space.blocks {
            let freq = from_a[&blk.block_id] as f64 / DRAWS as f64;
            assert!(
                (freq - 0.5).abs() <= three_sigma(0.5),
                "{}: parent-a share {freq}",
                blk.block_id
            );
        }
    }

    #[test]
    fn mutation_changes_blocks_at_the_expected_rate() {
        let space = SearchSpace::reduced();
        let mut rng = ChaCha8Rng::seed_from_u64(406);
        let mut parent = space.full_width_gene();
        for blk in &space.blocks {
            parent.choices.insert(blk.block_id.clone(), 0);
        }
        let prob = 0.1;
        let mut changed: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..DRAWS {
            let child = mutate(&space, &parent, prob, &mut rng).unwrap();
            child.validate(&space).unwrap();
            for blk in &space.blocks {
                if child.choices[&blk.block_id] != 0 {
                    *changed.entry(blk.block_id.clone()).or_default() += 1;
                }
            }
        }
        for blk in &space.blocks {
            // a resample lands on a different option with share (k-1)/k
            let k = blk.num_options() as f64;
            let p = prob * (k - 1.0) / k;
            let freq = changed.get(&blk.block_id).copied().unwrap_or(0) as f64 / DRAWS as f64;
            assert!(
                (freq - p).abs() <= three_sigma(p),
                "{}: change rate {freq} for p {p}",
                blk.block_id
            );
        }
    }

    #[test]
    fn operators_reject_foreign_genes() {
        let full = SearchSpace::full();
        let reduced = SearchSpace::reduced();
        let mut rng = ChaCha8Rng::seed_from_u64(407);
        let a = sample_uniform(&full, &mut rng);
        let b = sample_uniform(&reduced, &mut rng);
        assert!(crossover(&reduced, &a, &b, &mut rng).is_err());
        assert!(mutate(&reduced, &a, 0.5, &mut rng).is_err());
    }
}
