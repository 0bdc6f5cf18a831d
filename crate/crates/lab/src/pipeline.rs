//! Data preparation and the train-and-write path shared by `train` and
//! `serve`.

use std::path::Path;

use mmr_core::attack::inject;
use mmr_core::data::{generate, split, Dataset};
use mmr_core::hil::Annotator;
use mmr_core::trainer::{self, Observer, RunResult};

use crate::config::LabConfig;
use crate::error::Result;
use crate::runio::{self, DataInfo, RunRecord};
use crate::store;

/// Train and test sets for a run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub info: DataInfo,
}

/// Loads `data_dir` (or generates from the config), splits it, and injects
/// the configured attack into the training split unless the dataset was
/// already attacked.
pub fn prepare(config: &LabConfig, data_dir: Option<&Path>) -> Result<Prepared> {
    let (full, source) = match data_dir {
        Some(dir) => (store::load(dir)?, dir.display().to_string()),
        None => (generate(&config.data.generator)?, "generated".to_string()),
    };
    let (mut train, test) = split(&full, config.data.split_ratio, config.data.split_seed)?;
    if train.injection().is_none() {
        if let Some(spec) = &config.data.attack {
            train = inject(&train, spec)?;
        }
    }
    let info = DataInfo {
        source,
        n_train: train.len(),
        n_test: test.len(),
        h: train.height(),
        w: train.width(),
        injection: train.injection().cloned(),
    };
    Ok(Prepared { train, test, info })
}

/// Runs training and, if `out` is given, writes the run directory.
pub fn train(
    config: &LabConfig,
    data: Prepared,
    annotator: &mut dyn Annotator,
    observer: &mut dyn Observer,
    out: Option<&Path>,
) -> Result<(RunRecord, RunResult)> {
    let result = trainer::run(config.run.clone(), data.train, data.test, annotator, observer)?;
    let record = RunRecord::new(config, data.info, &result);
    if let Some(dir) = out {
        runio::write_run(dir, &record, &result)?;
    }
    Ok((record, result))
}
