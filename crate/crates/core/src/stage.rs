use std::fmt;

use serde::{Deserialize, Serialize};

/// Sleep stage, in the fixed class order used by every model output and report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Stage {
    Wake = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

pub const NUM_STAGES: usize = 5;

impl Stage {
    pub const ALL: [Stage; NUM_STAGES] = [Stage::Wake, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Self::ALL.get(i).copied()
    }

    /// Short name used in CSV exports: W, N1, N2, N3, REM.
    pub fn short_name(self) -> &'static str {
        match self {
            Stage::Wake => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Stage> {
        Self::ALL.into_iter().find(|st| st.short_name().eq_ignore_ascii_case(s.trim()))
    }

    /// Maps a scoring annotation to a stage.
    ///
    /// | annotation text    | stage |
    /// |--------------------|-------|
    /// | `Sleep stage W`    | Wake  |
    /// | `Sleep stage N1`   | N1    |
    /// | `Sleep stage N2`   | N2    |
    /// | `Sleep stage N3`   | N3    |
    /// | `Sleep stage R`    | REM   |
    ///
    /// Matching ignores ASCII case and surrounding whitespace. Any other text,
    /// including `Sleep stage ?`, is not a scored stage.
    pub fn from_annotation(text: &str) -> Option<Stage> {
        let t = text.trim();
        if !t.get(..12).is_some_and(|p| p.eq_ignore_ascii_case("sleep stage ")) {
            return None;
        }
        match t[12..].trim().to_ascii_uppercase().as_str() {
            "W" => Some(Stage::Wake),
            "N1" => Some(Stage::N1),
            "N2" => Some(Stage::N2),
            "N3" => Some(Stage::N3),
            "R" => Some(Stage::Rem),
            _ => None,
        }
    }

    /// True when the text is in the stage vocabulary at all (scored or not).
    pub fn is_stage_annotation(text: &str) -> bool {
        text.trim().get(..11).is_some_and(|p| p.eq_ignore_ascii_case("sleep stage"))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}
