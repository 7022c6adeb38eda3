use serde::{Deserialize, Serialize};

/// Scene complexity by number of people in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyGroup {
    Easy,
    Medium,
    Hard,
}

impl DifficultyGroup {
    pub const ALL: [DifficultyGroup; 3] = [Self::Easy, Self::Medium, Self::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }
}

impl std::fmt::Display for DifficultyGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Easy up to 2 people, Medium for 3 to 7, Hard from 8.
pub fn difficulty_of(person_count: u32) -> DifficultyGroup {
    match person_count {
        0..=2 => DifficultyGroup::Easy,
        3..=7 => DifficultyGroup::Medium,
        _ => DifficultyGroup::Hard,
    }
}
