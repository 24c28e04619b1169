//! Re-running episodes from action traces.

use thiserror::Error;
use trolley_core::record::{make_decision_record, parse_trace, DecisionRecord, RecordContext, TraceEntry};
use trolley_core::sim::{EpisodePhase, EpisodeState, SimParams};

use crate::catalog::ScenarioFile;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("TRACE_MISMATCH: {0}")]
    Mismatch(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn mismatch(msg: impl Into<String>) -> ReplayError {
    ReplayError::Mismatch(msg.into())
}

pub fn read_traces(text: &str) -> Result<Vec<TraceEntry>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_trace(l).map_err(|message| ReplayError::Parse { line: i + 1, message }))
        .collect()
}

/// Replays one episode. The trace must end exactly when the episode does.
pub fn replay_entry(file: &ScenarioFile, entry: &TraceEntry, params: &SimParams) -> Result<DecisionRecord, ReplayError> {
    if entry.file_id != file.file_id {
        return Err(mismatch(format!(
            "trace was recorded on file {}, not {} ({})",
            entry.file_id, file.file_id, file.name
        )));
    }
    let test_num = entry.trace.test_num;
    let scenario = file
        .simulation
        .scenario(test_num)
        .ok_or_else(|| mismatch(format!("no scenario with test_num {test_num}")))?;
    let ctx = RecordContext::new(entry.trace.session_id.clone(), entry.role).map_err(|e| mismatch(e.to_string()))?;
    let layout_id = file.simulation.position_of(test_num).unwrap_or(0) as u32;
    let mut episode =
        EpisodeState::new(scenario.clone(), *params, layout_id).map_err(|e| mismatch(e.to_string()))?;
    for (i, control) in entry.trace.expand().enumerate() {
        if episode.phase() != EpisodePhase::Running {
            return Err(mismatch(format!(
                "scenario {test_num} ended after {i} ticks but the trace has {}",
                entry.trace.total_ticks()
            )));
        }
        episode.run_tick(control).map_err(|e| mismatch(e.to_string()))?;
    }
    if episode.phase() == EpisodePhase::Running {
        return Err(mismatch(format!(
            "trace for scenario {test_num} ran out after {} ticks with the episode still running",
            entry.trace.total_ticks()
        )));
    }
    make_decision_record(&ctx, &episode).map_err(|e| mismatch(e.to_string()))
}

pub fn replay(file: &ScenarioFile, entries: &[TraceEntry], params: &SimParams) -> Result<Vec<DecisionRecord>, ReplayError> {
    if entries.is_empty() && !file.simulation.scenarios.is_empty() {
        return Err(mismatch("trace is empty"));
    }
    entries.iter().map(|e| replay_entry(file, e, params)).collect()
}
