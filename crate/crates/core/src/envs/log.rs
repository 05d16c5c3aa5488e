use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of an episode log CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub done: bool,
}

pub fn write_episode_log(path: &Path, rows: &[EpisodeLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
