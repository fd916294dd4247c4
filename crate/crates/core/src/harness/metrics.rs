//! Aggregation of episode logs into the three result tables.
//!
//! Aggregation is a pure, ordered reduction over [`EpisodeResult`]s: groups
//! appear in first-seen order and sums run in (trace, stage) order, so the
//! same logs always produce byte-identical CSV files.

use std::path::Path;

use super::data::csv_error;
use crate::error::Result;
use crate::predictors::PredictorKind;
use crate::protocol::{pilot_budget, EpisodeLog, SwitchRule};
use crate::selection::Strategy;

pub const GAIN_VS_TAU_FILE: &str = "gain_vs_tau.csv";
pub const GAIN_VS_VELOCITY_FILE: &str = "gain_vs_velocity.csv";
pub const OVERHEAD_FILE: &str = "overhead.csv";

/// One episode together with the grouping keys it was run under.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub predictor: PredictorKind,
    pub strategy: Strategy,
    pub rule: SwitchRule,
    pub velocity_mps: f64,
    pub log: EpisodeLog,
}

/// Mean normalized gain of one group, either at one `tau` or over all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub experiment_id: String,
    pub predictor: PredictorKind,
    pub strategy: Strategy,
    pub rule: SwitchRule,
    pub velocity_mps: f64,
    /// `None` for the average over every prediction instant.
    pub tau: Option<f64>,
    pub mean_norm_gain: f64,
    pub n: usize,
    /// Overhead of the group's episodes.
    pub overhead: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRow {
    pub rule: SwitchRule,
    pub velocity_mps: f64,
    pub overhead_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub gain_vs_tau: Vec<MetricsRecord>,
    pub gain_vs_velocity: Vec<MetricsRecord>,
    pub overhead: Vec<OverheadRow>,
}

impl Metrics {
    /// Mean gain of a (predictor, rule, velocity) group over all instants.
    pub fn mean_gain(&self, predictor: PredictorKind, rule: SwitchRule, velocity_mps: f64) -> Option<f64> {
        self.gain_vs_velocity
            .iter()
            .find(|r| r.predictor == predictor && r.rule == rule && r.velocity_mps == velocity_mps)
            .map(|r| r.mean_norm_gain)
    }

    pub fn overhead_of(&self, rule: SwitchRule, velocity_mps: f64) -> Option<f64> {
        self.overhead
            .iter()
            .find(|r| r.rule == rule && r.velocity_mps == velocity_mps)
            .map(|r| r.overhead_fraction)
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(GAIN_VS_TAU_FILE)).map_err(csv_error)?;
        w.write_record(["predictor", "rule", "velocity_mps", "tau", "mean_norm_gain", "n"])
            .map_err(csv_error)?;
        for r in &self.gain_vs_tau {
            w.write_record([
                r.predictor.to_string(),
                r.rule.to_string(),
                r.velocity_mps.to_string(),
                r.tau.map_or_else(String::new, |t| t.to_string()),
                r.mean_norm_gain.to_string(),
                r.n.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(GAIN_VS_VELOCITY_FILE)).map_err(csv_error)?;
        w.write_record(["predictor", "rule", "velocity_mps", "mean_norm_gain", "n"])
            .map_err(csv_error)?;
        for r in &self.gain_vs_velocity {
            w.write_record([
                r.predictor.to_string(),
                r.rule.to_string(),
                r.velocity_mps.to_string(),
                r.mean_norm_gain.to_string(),
                r.n.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(OVERHEAD_FILE)).map_err(csv_error)?;
        w.write_record(["rule", "velocity_mps", "overhead_fraction"])
            .map_err(csv_error)?;
        for r in &self.overhead {
            w.write_record([r.rule.to_string(), r.velocity_mps.to_string(), r.overhead_fraction.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

type GroupKey = (PredictorKind, Strategy, SwitchRule, u64);

fn key(r: &EpisodeResult) -> GroupKey {
    (r.predictor, r.strategy, r.rule, r.velocity_mps.to_bits())
}

/// Overhead pooled over episodes.
fn pooled_overhead<'a>(logs: impl Iterator<Item = &'a EpisodeLog>) -> f64 {
    let (mut sent, mut budget) = (0usize, 0usize);
    for log in logs {
        let (s, b) = pilot_budget(log, log.codebook_size);
        sent += s;
        budget += b;
    }
    if budget == 0 {
        0.0
    } else {
        sent as f64 / budget as f64
    }
}

/// Builds every table from episode results alone.
///
/// Overhead depends on the predictor under the adaptive rule, so the overhead
/// table reports the episodes of the first predictor in `results`.
pub fn aggregate(results: &[EpisodeResult], experiment_id: &str) -> Metrics {
    let mut groups: Vec<(GroupKey, Vec<&EpisodeResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(k, _)| *k == key(r)) {
            Some((_, members)) => members.push(r),
            None => groups.push((key(r), vec![r])),
        }
    }

    let mut metrics = Metrics::default();
    for ((predictor, strategy, rule, v_bits), members) in &groups {
        let velocity_mps = f64::from_bits(*v_bits);
        let overhead = pooled_overhead(members.iter().map(|r| &r.log));
        let record = |tau, mean_norm_gain, n| MetricsRecord {
            experiment_id: experiment_id.to_string(),
            predictor: *predictor,
            strategy: *strategy,
            rule: *rule,
            velocity_mps,
            tau,
            mean_norm_gain,
            n,
            overhead,
        };

        // Per-slot sums; the slot's tau is the same in every stage.
        let mut slots: Vec<(f64, f64, usize)> = Vec::new();
        for r in members {
            for stage in &r.log.stages {
                for (i, p) in stage.predictions.iter().enumerate() {
                    if slots.len() <= i {
                        slots.push((p.tau, 0.0, 0));
                    }
                    slots[i].1 += p.normalized_gain;
                    slots[i].2 += 1;
                }
            }
        }
        for &(tau, sum, n) in &slots {
            metrics.gain_vs_tau.push(record(Some(tau), sum / n as f64, n));
        }
        let (sum, n) = slots.iter().fold((0.0, 0), |(s, c), &(_, x, k)| (s + x, c + k));
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        metrics.gain_vs_velocity.push(record(None, mean, n));
    }

    if let Some(first) = results.first().map(|r| r.predictor) {
        let mut seen: Vec<(SwitchRule, u64)> = Vec::new();
        for ((predictor, _, rule, v_bits), members) in &groups {
            if *predictor != first || seen.contains(&(*rule, *v_bits)) {
                continue;
            }
            seen.push((*rule, *v_bits));
            metrics.overhead.push(OverheadRow {
                rule: *rule,
                velocity_mps: f64::from_bits(*v_bits),
                overhead_fraction: pooled_overhead(members.iter().map(|r| &r.log)),
            });
        }
    }
    metrics
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{PredictionRecord, StageLog, StageMode};
    use crate::selection::CandidateSet;

    fn log(id: &str, pilots: &[usize], gains: &[[f64; 2]]) -> EpisodeLog {
        let stages = pilots
            .iter()
            .zip(gains)
            .enumerate()
            .map(|(n, (&sent, g))| StageLog {
                stage_index: n,
                time_s: n as f64 * 0.1,
                mode: if sent == 8 { StageMode::Scan } else { StageMode::Track },
                candidate_set: CandidateSet::full(8),
                pilots_sent: sent,
                stage_optimum: 1,
                predictions: g
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| PredictionRecord {
                        time_s: 0.0,
                        tau: (i + 1) as f64 / 3.0,
                        global_index: 1,
                        normalized_gain: x,
                        raw_gain: x,
                    })
                    .collect(),
            })
            .collect();
        EpisodeLog {
            trace_id: id.into(),
            codebook_size: 8,
            period_s: 0.1,
            stages,
        }
    }

    fn result(p: PredictorKind, rule: SwitchRule, v: f64, log: EpisodeLog) -> EpisodeResult {
        EpisodeResult {
            predictor: p,
            strategy: Strategy::Uneven,
            rule,
            velocity_mps: v,
            log,
        }
    }

    #[test]
    fn tables_from_logs() {
        let a = log("a", &[8, 2], &[[1.0, 0.5], [0.5, 0.0]]);
        let b = log("b", &[8, 8], &[[1.0, 1.0], [1.0, 1.0]]);
        let results = vec![
            result(PredictorKind::Hold, SwitchRule::Adaptive, 5.0, a.clone()),
            result(PredictorKind::Hold, SwitchRule::Adaptive, 5.0, b.clone()),
            result(PredictorKind::Oracle, SwitchRule::Adaptive, 5.0, a),
        ];
        let m = aggregate(&results, "x");
        assert_eq!(m.gain_vs_tau.len(), 4);
        assert_eq!(m.gain_vs_tau[0].mean_norm_gain, 0.875);
        assert_eq!(m.gain_vs_tau[0].n, 4);
        assert_eq!(m.gain_vs_tau[1].mean_norm_gain, 0.625);
        assert_eq!(m.mean_gain(PredictorKind::Hold, SwitchRule::Adaptive, 5.0), Some(0.75));
        assert_eq!(m.mean_gain(PredictorKind::Oracle, SwitchRule::Adaptive, 5.0), Some(0.5));
        // Overhead follows the first predictor only; stage 0 is not counted.
        assert_eq!(m.overhead.len(), 1);
        assert_eq!(m.overhead[0].overhead_fraction, 10.0 / 16.0);
        assert_eq!(m.gain_vs_tau[0].overhead, 10.0 / 16.0);
    }

    #[test]
    fn csvs_are_reproducible() {
        let results = vec![result(
            PredictorKind::Hold,
            SwitchRule::Periodic,
            10.0,
            log("a", &[8, 2], &[[1.0, 0.25], [0.5, 0.125]]),
        )];
        let dir = tempfile::tempdir().unwrap();
        aggregate(&results, "x").write_csvs(&dir.path().join("1")).unwrap();
        aggregate(&results, "x").write_csvs(&dir.path().join("2")).unwrap();
        for f in [GAIN_VS_TAU_FILE, GAIN_VS_VELOCITY_FILE, OVERHEAD_FILE] {
            let a = std::fs::read(dir.path().join("1").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("2").join(f)).unwrap();
            assert_eq!(a, b);
        }
        let tau = std::fs::read_to_string(dir.path().join("1").join(GAIN_VS_TAU_FILE)).unwrap();
        assert_eq!(
            tau,
            "predictor,rule,velocity_mps,tau,mean_norm_gain,n\n\
             hold,periodic,10,0.3333333333333333,0.75,2\n\
             hold,periodic,10,0.6666666666666666,0.1875,2\n"
        );
        let overhead = std::fs::read_to_string(dir.path().join("1").join(OVERHEAD_FILE)).unwrap();
        assert_eq!(overhead, "rule,velocity_mps,overhead_fraction\nperiodic,10,0.25\n");
    }
}
