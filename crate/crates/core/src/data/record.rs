use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Highest subject id in the standard training partition.
pub const STANDARD_TRAIN_MAX_ID: u32 = 74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// Normal walking.
    Nm,
    /// Carrying a bag.
    Bg,
    /// Wearing a coat.
    Cl,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Nm, Condition::Bg, Condition::Cl];

    pub fn tag(self) -> &'static str {
        match self {
            Condition::Nm => "nm",
            Condition::Bg => "bg",
            Condition::Cl => "cl",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag().to_uppercase())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nm" => Ok(Condition::Nm),
            "bg" => Ok(Condition::Bg),
            "cl" => Ok(Condition::Cl),
            _ => Err(Error::Data(format!("unknown walking condition '{s}'"))),
        }
    }
}

/// Clip payload: silhouettes (`T` frames of `side × side`, values in [0, 1])
/// or a precomputed `T × d` feature sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipData {
    Frames { side: usize, data: Vec<f32> },
    Features(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub subject: u32,
    pub condition: Condition,
    pub seq: u32,
    pub view: String,
    pub data: ClipData,
}

impl ClipRecord {
    pub fn frames(subject: u32, condition: Condition, seq: u32, view: &str, side: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || data.is_empty() || data.len() % (side * side) != 0 {
            return Err(Error::Data(format!("{} values do not form {side}×{side} frames", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("frame value {v} outside [0, 1]")));
        }
        Ok(ClipRecord { subject, condition, seq, view: view.to_string(), data: ClipData::Frames { side, data } })
    }

    pub fn features(subject: u32, condition: Condition, seq: u32, view: &str, features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 || features.is_empty() {
            return Err(Error::Data(format!("features must be T×d, got {:?}", features.shape())));
        }
        Ok(ClipRecord { subject, condition, seq, view: view.to_string(), data: ClipData::Features(features) })
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ClipData::Frames { side, data } => data.len() / (side * side),
            ClipData::Features(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames as a `T × 1 × side × side` tensor.
    pub fn frame_tensor(&self) -> Result<Tensor> {
        match &self.data {
            ClipData::Frames { side, data } => Tensor::from_vec(
                &[data.len() / (side * side), 1, *side, *side],
                data.iter().map(|&v| v as f64).collect(),
            ),
            ClipData::Features(_) => Err(Error::Data(format!("{} holds features, not frames", self.label()))),
        }
    }

    /// Short human-readable identifier, e.g. `003/nm-02/090`.
    pub fn label(&self) -> String {
        format!("{:03}/{}-{:02}/{}", self.subject, self.condition.tag(), self.seq, self.view)
    }

    pub(crate) fn sort_key(&self) -> (u32, Condition, u32, String) {
        (self.subject, self.condition, self.seq, self.view.clone())
    }
}

/// Training and test clips with disjoint subject sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    train: Vec<ClipRecord>,
    test: Vec<ClipRecord>,
}

impl DatasetSplit {
    pub fn new(train: Vec<ClipRecord>, test: Vec<ClipRecord>) -> Result<Self> {
        let a: BTreeSet<u32> = train.iter().map(|r| r.subject).collect();
        let b: BTreeSet<u32> = test.iter().map(|r| r.subject).collect();
        if let Some(s) = a.intersection(&b).next() {
            return Err(Error::Data(format!("subject {s} appears in both train and test")));
        }
        Ok(DatasetSplit { train, test })
    }

    /// Partitions by subject id: ids `≤ max_train_id` train, the rest test.
    pub fn by_subject_id(records: Vec<ClipRecord>, max_train_id: u32) -> Self {
        let (train, test) = records.into_iter().partition(|r| r.subject <= max_train_id);
        DatasetSplit { train, test }
    }

    /// The standard partition: subjects 1–74 train, 75 onward test.
    pub fn standard(records: Vec<ClipRecord>) -> Self {
        Self::by_subject_id(records, STANDARD_TRAIN_MAX_ID)
    }

    pub fn train(&self) -> &[ClipRecord] {
        &self.train
    }

    pub fn test(&self) -> &[ClipRecord] {
        &self.test
    }

    pub fn into_parts(self) -> (Vec<ClipRecord>, Vec<ClipRecord>) {
        (self.train, self.test)
    }

    pub fn train_subjects(&self) -> BTreeSet<u32> {
        self.train.iter().map(|r| r.subject).collect()
    }

    pub fn test_subjects(&self) -> BTreeSet<u32> {
        self.test.iter().map(|r| r.subject).collect()
    }
}
