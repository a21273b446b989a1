//! Datasets: CSV ingestion, batching and a synthetic multi-scenario
//! generator.

pub mod batch;
pub mod csv;
pub mod synth;

pub use batch::batch_iter;
pub use csv::{load_csv, load_dir, parse_csv, write_csv, write_dir};
pub use synth::{synth_generate, HiddenWeights, SynthConfig};

use crate::backbone::Sample;
use crate::error::{Error, Result};

/// Scenario count and per-field vocabulary sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub scenarios: usize,
    pub vocab_sizes: Vec<usize>,
}

impl Schema {
    pub fn fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    /// Smallest schema that covers every sample. `fields` fixes F even when
    /// there are no samples.
    pub fn infer(fields: usize, samples: &[Sample]) -> Self {
        let mut scenarios = 0;
        let mut vocab_sizes = vec![0; fields];
        for s in samples {
            scenarios = scenarios.max(s.scenario + 1);
            for (v, &id) in vocab_sizes.iter_mut().zip(&s.features) {
                *v = (*v).max(id as usize + 1);
            }
        }
        Self {
            scenarios,
            vocab_sizes,
        }
    }

    /// Field-wise union.
    pub fn merge(&self, other: &Schema) -> Result<Schema> {
        if self.fields() != other.fields() {
            return Err(Error::data(format!(
                "field counts differ: {} vs {}",
                self.fields(),
                other.fields()
            )));
        }
        Ok(Schema {
            scenarios: self.scenarios.max(other.scenarios),
            vocab_sizes: self
                .vocab_sizes
                .iter()
                .zip(&other.vocab_sizes)
                .map(|(a, b)| *a.max(b))
                .collect(),
        })
    }

    pub fn check(&self, sample: &Sample) -> Result<()> {
        if sample.scenario >= self.scenarios {
            return Err(Error::data(format!(
                "scenario {} outside schema with {} scenarios",
                sample.scenario, self.scenarios
            )));
        }
        if sample.features.len() != self.fields() {
            return Err(Error::data(format!(
                "sample has {} features, schema has {}",
                sample.features.len(),
                self.fields()
            )));
        }
        for (field, (&id, &v)) in sample.features.iter().zip(&self.vocab_sizes).enumerate() {
            if id as usize >= v {
                return Err(Error::data(format!(
                    "field {field}: id {id} out of vocabulary of size {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Samples read from one file, with the schema inferred from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub samples: Vec<Sample>,
}

/// Train and test partitions sharing one schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn from_tables(train: Table, test: Table) -> Result<Self> {
        let schema = train.schema.merge(&test.schema)?;
        Ok(Self {
            schema,
            train: train.samples,
            test: test.samples,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for s in self.train.iter().chain(&self.test) {
            self.schema.check(s)?;
        }
        Ok(())
    }

    /// Train samples of one scenario, in file order.
    pub fn train_of(&self, scenario: usize) -> Vec<&Sample> {
        self.train
            .iter()
            .filter(|s| s.scenario == scenario)
            .collect()
    }

    pub fn test_of(&self, scenario: usize) -> Vec<&Sample> {
        self.test
            .iter()
            .filter(|s| s.scenario == scenario)
            .collect()
    }
}
