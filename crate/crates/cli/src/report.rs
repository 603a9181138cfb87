//! Delimited report files. Phases and tasks are 1-based. Values use the
//! shortest decimal form that parses back to the same `f64`.

use std::collections::BTreeMap;

use concil::metrics::{MetricsError, Target};
use concil::{AccuracyHistory, MetricsRecord};

use crate::config::LearnerKind;

pub const METRICS_HEADER: [&str; 4] = ["phase", "learner", "metric", "value"];
pub const ACCURACY_HEADER: [&str; 5] = ["learner", "phase", "task", "kind", "accuracy"];
pub const METRICS_STEM: &str = "metrics";
pub const ACCURACY_STEM: &str = "accuracy";

fn line(out: &mut String, cells: &[String], delimiter: char) {
    out.push_str(&cells.join(&delimiter.to_string()));
    out.push('\n');
}

fn header(out: &mut String, cells: &[&str], delimiter: char) {
    line(out, &cells.iter().map(|s| s.to_string()).collect::<Vec<_>>(), delimiter);
}

/// One row per phase × learner × metric.
pub fn metrics_table(histories: &[(LearnerKind, AccuracyHistory)], delimiter: char) -> Result<String, MetricsError> {
    let mut out = String::new();
    header(&mut out, &METRICS_HEADER, delimiter);
    let phases = histories.iter().map(|(_, h)| h.phases()).max().unwrap_or(0);
    for t in 1..=phases {
        for (kind, history) in histories {
            let record = MetricsRecord::from_history(history, t)?;
            for (name, value) in record.values() {
                line(&mut out, &[t.to_string(), kind.name().into(), name.into(), value.to_string()], delimiter);
            }
        }
    }
    Ok(out)
}

const KINDS: [(Target, &str); 2] = [(Target::Concept, "concept"), (Target::Class, "class")];

/// Long format: accuracy of each learner after each phase on each seen task.
pub fn accuracy_table(histories: &[(LearnerKind, AccuracyHistory)], delimiter: char) -> String {
    let mut out = String::new();
    header(&mut out, &ACCURACY_HEADER, delimiter);
    for (learner, history) in histories {
        for j in 0..history.phases() {
            for k in 0..=j {
                for (target, name) in KINDS {
                    let v = history.rows(target)[j][k];
                    line(
                        &mut out,
                        &[learner.name().into(), (j + 1).to_string(), (k + 1).to_string(), name.into(), v.to_string()],
                        delimiter,
                    );
                }
            }
        }
    }
    out
}

/// Rebuilds per-learner histories from [`accuracy_table`] output.
pub fn parse_accuracy_table(text: &str, delimiter: char, learners: &[LearnerKind]) -> Result<Vec<AccuracyHistory>, String> {
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().ok_or("empty accuracy table")?.split(delimiter).collect();
    if head != ACCURACY_HEADER {
        return Err(format!("unexpected header {head:?}"));
    }
    let mut cells: BTreeMap<(LearnerKind, usize, usize, &str), f64> = BTreeMap::new();
    for (i, l) in lines.enumerate() {
        let bad = |what: &str| format!("line {}: {what}", i + 2);
        let f: Vec<&str> = l.split(delimiter).collect();
        if f.len() != ACCURACY_HEADER.len() {
            return Err(bad("wrong number of cells"));
        }
        let learner = LearnerKind::parse(f[0]).ok_or_else(|| bad("unknown learner"))?;
        let phase: usize = f[1].parse().map_err(|_| bad("bad phase"))?;
        let task: usize = f[2].parse().map_err(|_| bad("bad task"))?;
        let kind = KINDS.iter().find(|(_, n)| *n == f[3]).ok_or_else(|| bad("bad kind"))?.1;
        let value: f64 = f[4].parse().map_err(|_| bad("bad accuracy"))?;
        cells.insert((learner, phase, task, kind), value);
    }
    learners
        .iter()
        .map(|&learner| {
            let mut h = AccuracyHistory::new();
            for j in 1.. {
                if !cells.contains_key(&(learner, j, 1, "concept")) {
                    break;
                }
                let row = |kind: &str| -> Result<Vec<f64>, String> {
                    (1..=j)
                        .map(|k| {
                            cells
                                .get(&(learner, j, k, kind))
                                .copied()
                                .ok_or_else(|| format!("missing {} phase {j} task {k} {kind}", learner.name()))
                        })
                        .collect()
                };
                h.push(row("concept")?, row("class")?).map_err(|e| e.to_string())?;
            }
            Ok(h)
        })
        .collect()
}
