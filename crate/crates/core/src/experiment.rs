//! Seeded synthetic benchmarks comparing ablation modes.
//!
//! A benchmark draws a train/test split per seed, pretrains one foundation
//! backbone on a separate draw, fine-tunes each requested mode from the same
//! seed with the same step budget, and scores the test split per degradation
//! mode.

use std::collections::BTreeMap;

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::eval::{depth_metrics, DepthMetrics, MetricsMean};
use crate::io::WeightArchive;
use crate::model::{
    load_pretrained, pretrain_foundation, train_with, Ablation, Example, LoadReport, Model, ModelConfig,
    OptimizerConfig, StepReport, TrainConfig,
};
use crate::polar::GuidanceTensor;
use crate::simulate::{generate, DegradationDistribution, DegradationMode, Sample, SceneDistribution};

/// Label of the aggregate row in per-mode tables.
pub const ALL_LABEL: &str = "All";

/// Per-mode rows in [`DegradationMode::ALL`] order, followed by the
/// aggregate over every sample. Each row averages per-sample metrics.
pub fn per_mode_rows(items: impl IntoIterator<Item = (DegradationMode, DepthMetrics)>) -> Result<Vec<(String, usize, DepthMetrics)>> {
    let mut by_mode: BTreeMap<DegradationMode, MetricsMean> = BTreeMap::new();
    let mut all = MetricsMean::default();
    for (mode, m) in items {
        by_mode.entry(mode).or_default().push(&m);
        all.push(&m);
    }
    let Some(total) = all.mean() else {
        return Err(Error::Domain("no samples to score".into()));
    };
    let mut rows: Vec<(String, usize, DepthMetrics)> = DegradationMode::ALL
        .into_iter()
        .filter_map(|mode| {
            let acc = by_mode.get(&mode)?;
            Some((mode.to_string(), acc.samples(), acc.mean()?))
        })
        .collect();
    rows.push((ALL_LABEL.to_string(), all.samples(), total));
    Ok(rows)
}

/// Builds a model for `config`, loading `foundation` when the mode starts
/// from pretrained weights.
pub fn build_model(config: &ModelConfig, foundation: Option<&WeightArchive>, seed: u64) -> Result<(Model, Option<LoadReport>)> {
    let mut model = Model::new(config.clone(), seed)?;
    let report = match foundation {
        Some(archive) if config.ablation.uses_foundation() => {
            Some(load_pretrained(&mut model.params, archive, &config.freeze_prefixes))
        }
        _ => None,
    };
    Ok((model, report))
}

fn examples(samples: &[Sample]) -> Vec<Example<'_>> {
    samples
        .iter()
        .map(|s| Example {
            guidance: &s.guidance,
            sensor: &s.sensor,
            gt: &s.gt,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub resolution: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub degradations: DegradationDistribution,
    /// Shared by every mode; the ablation field is overridden per run.
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub foundation_steps: usize,
    /// Seed of the foundation's own training draw.
    pub foundation_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            resolution: 64,
            train_samples: 200,
            test_samples: 50,
            degradations: DegradationDistribution::default(),
            model: ModelConfig::default(),
            steps: 1000,
            batch_size: 1,
            optimizer: OptimizerConfig::adam(1e-3),
            foundation_steps: 1000,
            foundation_seed: 0xF0_0D,
        }
    }
}

/// Test-split scores of one trained mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub ablation: Ablation,
    pub seed: u64,
    pub rows: Vec<(String, usize, DepthMetrics)>,
    pub log: Vec<StepReport>,
}

impl RunResult {
    pub fn row(&self, label: &str) -> Option<&DepthMetrics> {
        self.rows.iter().find(|(l, _, _)| l == label).map(|(_, _, m)| m)
    }

    pub fn rmse(&self) -> f64 {
        self.row(ALL_LABEL).map_or(f64::NAN, |m| m.rmse)
    }

    pub fn mode_rmse(&self, mode: DegradationMode) -> Option<f64> {
        self.row(mode.name()).map(|m| m.rmse)
    }
}

impl BenchmarkConfig {
    fn scenes(&self) -> SceneDistribution {
        SceneDistribution::new(self.resolution, self.resolution)
    }

    fn train_config(&self, steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed,
        }
    }

    /// Train and test samples for `seed`, drawn from one stream.
    pub fn split(&self, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("benchmark needs train and test samples".into()));
        }
        let mut train = generate(self.train_samples + self.test_samples, &self.scenes(), &self.degradations, seed)?;
        let test = train.split_off(self.train_samples);
        Ok((train, test))
    }

    /// Backbone weights pretrained on intensity-only guidance.
    pub fn foundation(&self) -> Result<WeightArchive> {
        let data = generate(self.train_samples, &self.scenes(), &self.degradations, self.foundation_seed)?;
        let tc = self.train_config(self.foundation_steps, self.foundation_seed);
        pretrain_foundation(&self.model, &examples(&data), &tc, self.foundation_seed)
    }

    /// Trains one mode on `train` and scores it on `test`.
    pub fn run(
        &self,
        ablation: Ablation,
        seed: u64,
        foundation: &WeightArchive,
        train: &[Sample],
        test: &[Sample],
    ) -> Result<RunResult> {
        let config = ModelConfig {
            ablation,
            ..self.model.clone()
        };
        let (mut model, _) = build_model(&config, Some(foundation), seed)?;
        let log = train_with(&mut model, &examples(train), &self.train_config(self.steps, seed), |_, _| {})?;
        let rows = per_mode_rows(
            test.iter()
                .map(|s| Ok((s.mode, score(&model, &s.guidance, &s.sensor, &s.gt)?)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        Ok(RunResult {
            ablation,
            seed,
            rows,
            log,
        })
    }

    /// Runs every mode on every seed. Results are grouped by seed, modes in
    /// the order given.
    pub fn compare(&self, ablations: &[Ablation], seeds: &[u64], foundation: &WeightArchive) -> Result<Vec<Vec<RunResult>>> {
        seeds
            .iter()
            .map(|&seed| {
                let (train, test) = self.split(seed)?;
                ablations
                    .iter()
                    .map(|&a| self.run(a, seed, foundation, &train, &test))
                    .collect()
            })
            .collect()
    }
}

fn score(model: &Model, guidance: &GuidanceTensor, sensor: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    depth_metrics(&model.enhance(guidance, sensor)?, gt)
}
