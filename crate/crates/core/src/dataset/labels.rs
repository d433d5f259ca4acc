use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Protocol codes used on the raw 700 Hz label track.
pub mod protocol {
    pub const TRANSIENT: u8 = 0;
    pub const BASELINE: u8 = 1;
    pub const STRESS: u8 = 2;
    pub const AMUSEMENT: u8 = 3;
    pub const MEDITATION: u8 = 4;
}

/// Class value for samples that belong to no task class.
pub const IGNORE: u8 = u8::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// baseline = 0, stress = 1, amusement = 2
    ThreeState,
    /// non-stress (baseline or amusement) = 0, stress = 1
    Binary,
}

impl TaskMode {
    pub fn n_classes(self) -> usize {
        match self {
            TaskMode::ThreeState => 3,
            TaskMode::Binary => 2,
        }
    }

    pub fn class_of(self, code: u8) -> u8 {
        use protocol::*;
        match (self, code) {
            (TaskMode::ThreeState, BASELINE) => 0,
            (TaskMode::ThreeState, STRESS) => 1,
            (TaskMode::ThreeState, AMUSEMENT) => 2,
            (TaskMode::Binary, BASELINE | AMUSEMENT) => 0,
            (TaskMode::Binary, STRESS) => 1,
            _ => IGNORE,
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::ThreeState => "three_state",
            TaskMode::Binary => "binary",
        })
    }
}

impl FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "three_state" | "three-state" | "3" => Ok(TaskMode::ThreeState),
            "binary" | "2" => Ok(TaskMode::Binary),
            other => Err(format!("unknown task mode `{other}`")),
        }
    }
}

/// Maps protocol codes to task classes; everything else becomes [`IGNORE`].
pub fn map_conditions(labels: &[u8], mode: TaskMode) -> Vec<u8> {
    labels.iter().map(|&c| mode.class_of(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::protocol::*;
    use super::*;

    #[test]
    fn three_state_and_binary_tables() {
        let raw = [BASELINE, STRESS, AMUSEMENT];
        assert_eq!(map_conditions(&raw, TaskMode::ThreeState), vec![0, 1, 2]);
        assert_eq!(map_conditions(&raw, TaskMode::Binary), vec![0, 1, 0]);
    }

    #[test]
    fn meditation_and_transients_are_ignored() {
        for mode in [TaskMode::ThreeState, TaskMode::Binary] {
            let out = map_conditions(&[MEDITATION, TRANSIENT, 5, 6, 7, 200], mode);
            assert!(out.iter().all(|&c| c == IGNORE));
        }
    }
}
