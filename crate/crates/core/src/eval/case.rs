use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// Which task family a case belongs to; becomes the task column of reports.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskTag {
    Granular,
    Vehicles,
    Custom(String),
}

impl std::fmt::Display for TaskTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskTag::Granular => f.write_str("granular"),
            TaskTag::Vehicles => f.write_str("vehicles"),
            TaskTag::Custom(tag) => write!(f, "custom:{tag}"),
        }
    }
}

impl std::str::FromStr for TaskTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "granular" => Ok(TaskTag::Granular),
            "vehicles" => Ok(TaskTag::Vehicles),
            _ => match s.strip_prefix("custom:") {
                Some(tag) if !tag.is_empty() && !tag.contains(',') => {
                    Ok(TaskTag::Custom(tag.into()))
                }
                _ => Err(format!(
                    "unknown task `{s}` (granular, vehicles or custom:<tag>)"
                )),
            },
        }
    }
}

impl TryFrom<String> for TaskTag {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TaskTag> for String {
    fn from(t: TaskTag) -> Self {
        t.to_string()
    }
}

/// One query of the evaluation: an image, the region of interest in it, and
/// how many people the image contains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    /// Unique per case; an image with several target instances yields several cases.
    pub case_id: String,
    pub image_id: String,
    pub image_path: PathBuf,
    pub input_box: BBox,
    pub person_count: u32,
    pub task: TaskTag,
}
