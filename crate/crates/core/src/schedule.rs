//! Session schedules: which classes arrive in each session and how many
//! training shots each class contributes.
//!
//! Stored as JSON, e.g.
//!
//! ```json
//! {"sessions": [{"classes": [0, 1, 2], "shots": 50}, {"classes": [3], "shots": "all"}]}
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Per-class training examples drawn in a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shots {
    All,
    Count(u32),
}

impl Shots {
    pub fn limit(self, available: usize) -> usize {
        match self {
            Shots::All => available,
            Shots::Count(n) => (n as usize).min(available),
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::All => s.serialize_str("all"),
            Shots::Count(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("shots must be positive")),
            Raw::Count(n) => Ok(Shots::Count(n)),
            Raw::Word(w) if w == "all" => Ok(Shots::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "shots must be a positive integer or \"all\", got {w:?}"
            ))),
        }
    }
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::All => f.write_str("all"),
            Shots::Count(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub classes: Vec<u32>,
    pub shots: Shots,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub sessions: Vec<Session>,
}

impl SessionSchedule {
    pub fn new(sessions: Vec<Session>) -> Self {
        Self { sessions }
    }

    /// All classes in one session.
    pub fn single(classes: Vec<u32>, shots: Shots) -> Self {
        Self::new(vec![Session { classes, shots }])
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn all_classes(&self) -> BTreeSet<u32> {
        self.sessions
            .iter()
            .flat_map(|s| s.classes.iter().copied())
            .collect()
    }

    /// Checks the structural invariants. Overlapping label spaces are
    /// rejected unless `allow_overlap` is set.
    pub fn validate(&self, allow_overlap: bool) -> Result<()> {
        let first = self
            .sessions
            .first()
            .ok_or_else(|| Error::InvalidSchedule("no sessions".into()))?;
        let distinct_first: BTreeSet<_> = first.classes.iter().collect();
        if distinct_first.len() < 2 {
            return Err(Error::InvalidSchedule(
                "the first session needs at least two classes".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.sessions.iter().enumerate() {
            if s.classes.is_empty() {
                return Err(Error::InvalidSchedule(format!(
                    "session {} is empty",
                    i + 1
                )));
            }
            if s.shots == Shots::Count(0) {
                return Err(Error::InvalidSchedule(format!(
                    "session {} requests zero shots",
                    i + 1
                )));
            }
            let mut local = BTreeSet::new();
            for &c in &s.classes {
                if !local.insert(c) {
                    return Err(Error::InvalidSchedule(format!(
                        "class {c} repeated within session {}",
                        i + 1
                    )));
                }
                if !seen.insert(c) && !allow_overlap {
                    return Err(Error::InvalidSchedule(format!(
                        "class {c} of session {} already appeared in an earlier session",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Session reordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionPermutation {
    /// `order[i]` is the old index of the session placed at position `i`.
    Full(Vec<usize>),
    /// Session 1 stays first; `order` permutes the remaining sessions
    /// (indices are 0-based into sessions `2..=S`).
    KeepFirst(Vec<usize>),
}

pub fn permute_sessions(
    schedule: &SessionSchedule,
    perm: &SessionPermutation,
) -> Result<SessionSchedule> {
    let n = schedule.len();
    let order: Vec<usize> = match perm {
        SessionPermutation::Full(order) => order.clone(),
        SessionPermutation::KeepFirst(rest) => {
            if n == 0 {
                return Err(Error::InvalidPermutation("empty schedule".into()));
            }
            std::iter::once(0)
                .chain(rest.iter().map(|i| i + 1))
                .collect()
        }
    };
    if order.len() != n {
        return Err(Error::InvalidPermutation(format!(
            "expected {n} entries, got {}",
            order.len()
        )));
    }
    let mut hit = vec![false; n];
    for &i in &order {
        if i >= n || std::mem::replace(&mut hit[i], true) {
            return Err(Error::InvalidPermutation(format!(
                "{order:?} is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(SessionSchedule::new(
        order
            .iter()
            .map(|&i| schedule.sessions[i].clone())
            .collect(),
    ))
}

/// The three session shapes used to benchmark class-incremental learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// All data per class, few new classes per session.
    HighShot,
    /// A large first session with all data, then 5-shot sessions.
    FewShotPlus,
    /// 50 shots in every session, 20% of classes first, ~10% after.
    FewShot,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "high-shot" | "highshot" => Ok(Preset::HighShot),
            "few-shot+" | "few-shot-plus" | "fewshotplus" => Ok(Preset::FewShotPlus),
            "few-shot" | "fewshot" => Ok(Preset::FewShot),
            other => Err(Error::InvalidSchedule(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Preset::HighShot => "high-shot",
            Preset::FewShotPlus => "few-shot+",
            Preset::FewShot => "few-shot",
        })
    }
}

/// Concrete session shape: class counts and shots for the first and later
/// sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitShape {
    pub first_classes: usize,
    pub later_classes: usize,
    pub first_shots: Shots,
    pub later_shots: Shots,
}

impl Preset {
    /// Shape derived from the total class count by the preset's ratios.
    pub fn shape(self, num_classes: usize) -> SplitShape {
        let frac = |f: f64| ((num_classes as f64 * f).round() as usize).max(1);
        match self {
            Preset::HighShot => SplitShape {
                first_classes: frac(0.10).max(2),
                later_classes: frac(0.10),
                first_shots: Shots::All,
                later_shots: Shots::All,
            },
            Preset::FewShotPlus => SplitShape {
                first_classes: frac(0.60).max(2),
                later_classes: frac(0.05),
                first_shots: Shots::All,
                later_shots: Shots::Count(5),
            },
            Preset::FewShot => SplitShape {
                first_classes: frac(0.20).max(2),
                later_classes: frac(0.10),
                first_shots: Shots::Count(50),
                later_shots: Shots::Count(50),
            },
        }
    }

    /// Published shape for a named benchmark dataset, when one exists.
    pub fn dataset_shape(self, dataset: &str) -> Option<(usize, SplitShape)> {
        let key = dataset.to_ascii_lowercase().replace(['-', '_', ' '], "");
        let shape = |total, first, later, first_shots, later_shots| {
            Some((
                total,
                SplitShape {
                    first_classes: first,
                    later_classes: later,
                    first_shots,
                    later_shots,
                },
            ))
        };
        use Shots::{All, Count};
        match (self, key.as_str()) {
            (Preset::HighShot, "cifar100") => shape(100, 10, 10, All, All),
            (Preset::HighShot, "svhn") => shape(10, 2, 2, All, All),
            (Preset::HighShot, "dspritesloc") => shape(16, 4, 2, All, All),
            (Preset::HighShot, "fgvcaircraft") => shape(100, 10, 10, All, All),
            (Preset::HighShot, "cars") => shape(196, 16, 20, All, All),
            (Preset::HighShot, "letters") => shape(62, 12, 5, All, All),
            (Preset::HighShot, "core50") => shape(50, 10, 5, All, All),
            (Preset::FewShotPlus, "cifar100") => shape(100, 60, 5, All, Count(5)),
            (Preset::FewShotPlus, "cub200") => shape(200, 100, 10, All, Count(5)),
            (Preset::FewShot, "cifar100") => shape(100, 20, 10, Count(50), Count(50)),
            (Preset::FewShot, "svhn") => shape(10, 2, 2, Count(50), Count(50)),
            (Preset::FewShot, "dspritesloc") => shape(16, 4, 2, Count(50), Count(50)),
            (Preset::FewShot, "fgvcaircraft") => shape(100, 20, 10, Count(50), Count(50)),
            (Preset::FewShot, "cars") => shape(196, 36, 20, Count(50), Count(50)),
            (Preset::FewShot, "letters") => shape(62, 12, 5, Count(50), Count(50)),
            (Preset::FewShot, "domainnet") => shape(60, 12, 6, Count(50), Count(50)),
            (Preset::FewShot, "inaturalist") => shape(100, 20, 10, Count(50), Count(50)),
            _ => None,
        }
    }
}

impl SplitShape {
    /// Splits `class_ids` in the given order: the first session takes
    /// `first_classes` and each later session `later_classes`; the last
    /// session holds whatever remains and may be smaller.
    pub fn build(&self, class_ids: &[u32]) -> Result<SessionSchedule> {
        if self.first_classes < 2 || self.later_classes == 0 {
            return Err(Error::InvalidSchedule(format!(
                "degenerate shape: {} first, {} per later session",
                self.first_classes, self.later_classes
            )));
        }
        if class_ids.len() < self.first_classes {
            return Err(Error::InvalidSchedule(format!(
                "{} classes cannot fill a first session of {}",
                class_ids.len(),
                self.first_classes
            )));
        }
        let (first, rest) = class_ids.split_at(self.first_classes);
        let mut sessions = vec![Session {
            classes: first.to_vec(),
            shots: self.first_shots,
        }];
        for chunk in rest.chunks(self.later_classes) {
            sessions.push(Session {
                classes: chunk.to_vec(),
                shots: self.later_shots,
            });
        }
        let schedule = SessionSchedule::new(sessions);
        schedule.validate(false)?;
        Ok(schedule)
    }
}

/// Preset schedule over class ids `0..num_classes`.
pub fn preset_schedule(preset: Preset, num_classes: usize) -> Result<SessionSchedule> {
    let ids: Vec<u32> = (0..num_classes as u32).collect();
    preset.shape(num_classes).build(&ids)
}
