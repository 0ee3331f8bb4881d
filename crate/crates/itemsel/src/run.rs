//! Parallel experiment runner.

use itemsel_core::harness::{resolve_split, run_seed, DataBundle, ExperimentConfig, MaeTable};
use itemsel_core::Result;
use rayon::prelude::*;

/// Same cells as the sequential runner; (method, seed) jobs run on the rayon
/// pool and are collected in job order, so output does not depend on
/// scheduling.
pub fn run_experiment_parallel(config: &ExperimentConfig, bundle: &DataBundle) -> Result<MaeTable> {
    config.validate(bundle.matrix.n_models())?;
    let split = resolve_split(config, &bundle.matrix)?;
    let jobs: Vec<_> = config
        .methods
        .iter()
        .flat_map(|&m| config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(method, seed)| run_seed(config, bundle, &split, method, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(MaeTable::from_cells(cells.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use itemsel_core::harness::{generate_synthetic, run_experiment, Method};

    #[test]
    fn matches_sequential() {
        let syn = generate_synthetic(120, 16, 3).unwrap();
        let config = ExperimentConfig {
            methods: vec![Method::Random, Method::ScalesPp],
            percents: vec![0.05, 0.1],
            seeds: vec![0, 1, 2],
            holdout_count: 4,
            ..Default::default()
        };
        let a = run_experiment(&config, &syn.bundle).unwrap();
        let b = run_experiment_parallel(&config, &syn.bundle).unwrap();
        assert_eq!(a, b);
    }
}
