//! Wall-clock scaling of one training epoch in the training-set size.

use std::time::Instant;

use mmr_core::data::{generate, GeneratorSpec};
use mmr_core::hil::OracleAnnotator;
use mmr_core::trainer::{RunConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Test-set size used for every probe point, kept small and constant so
/// evaluation does not mask the training cost.
pub const PROBE_TEST_N: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub n: usize,
    /// Median over the timed epochs.
    pub secs_per_epoch: f64,
    pub epoch_secs: Vec<f64>,
}

/// Times `timed` epochs at each size after one untimed warm-up epoch (which
/// carries the cluster-layer initialization).
pub fn scaling_probe(generator: &GeneratorSpec, run: &RunConfig, sizes: &[usize], timed: usize) -> Result<Vec<ProbePoint>> {
    let timed = timed.max(1);
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let train = generate(&GeneratorSpec { n, ..generator.clone() })?;
        let test = generate(&GeneratorSpec {
            n: PROBE_TEST_N,
            seed: generator.seed.wrapping_add(1),
            ..generator.clone()
        })?;
        let config = RunConfig {
            epochs: timed + 1,
            ..run.clone()
        };
        let mut trainer = Trainer::new(config, train, test)?;
        let mut oracle = OracleAnnotator;
        trainer.step(&mut oracle, &mut ())?;
        let mut epoch_secs = Vec::with_capacity(timed);
        for _ in 0..timed {
            let start = Instant::now();
            trainer.step(&mut oracle, &mut ())?;
            epoch_secs.push(start.elapsed().as_secs_f64());
        }
        out.push(ProbePoint {
            n,
            secs_per_epoch: median(&epoch_secs),
            epoch_secs,
        });
    }
    Ok(out)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Per-epoch time of the last point over the first.
pub fn ratio(points: &[ProbePoint]) -> Option<f64> {
    let (a, b) = (points.first()?, points.last()?);
    (a.secs_per_epoch > 0.0).then(|| b.secs_per_epoch / a.secs_per_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn probe_reports_every_size() {
        let g = GeneratorSpec {
            h: 8,
            w: 8,
            ..GeneratorSpec::default()
        };
        let pts = scaling_probe(&g, &RunConfig::default(), &[40, 40], 1).unwrap();
        assert_eq!(pts.iter().map(|p| p.n).collect::<Vec<_>>(), vec![40, 40]);
        assert!(ratio(&pts).unwrap() > 0.0);
    }
}
