//! Imitation samples as JSONL, one sample per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ObsContext;
use super::{PlannerError, WaypointPlan};
use crate::world::EgoObservation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationSample {
    pub context: ObsContext,
    pub goal_obs: EgoObservation,
    pub target_plan: WaypointPlan,
}

pub fn write_samples<W: Write>(mut out: W, samples: &[ImitationSample]) -> Result<(), PlannerError> {
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, samples: &[ImitationSample]) -> Result<(), PlannerError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

/// Parses JSONL; blank lines are skipped, line numbers are 1-based.
pub fn parse_samples<R: BufRead>(input: R) -> Result<Vec<ImitationSample>, PlannerError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|source| PlannerError::DatasetParse { line: i + 1, source })?;
        out.push(s);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ImitationSample>, PlannerError> {
    parse_samples(BufReader::new(File::open(path)?))
}
