//! Anatomical region boxes: picking detected regions out of detector
//! proposals and filling in the ones the detector missed.

mod completer;

pub use completer::{
    complete, completer_train, CompleterConfig, CompleterFit, CompleterNet, Completion, MaskedBatch,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Number of anatomical regions per image.
pub const N_REGIONS: usize = 29;

/// `[x1, y1, x2, y2]` normalized to the image size.
pub type BoxCoords = [f64; 4];

/// One full set of region coordinates in configured-name order.
pub type Layout = [BoxCoords; N_REGIONS];

/// The ordered list of the 29 region names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RegionNames(Vec<String>);

impl RegionNames {
    pub fn new(names: Vec<String>) -> Result<Self> {
        check_len(N_REGIONS, names.len())?;
        let unique: HashSet<&str> = names.iter().map(String::as_str).collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidInput("region names must be unique".into()));
        }
        if names.iter().any(|n| n.is_empty()) {
            return Err(Error::InvalidInput("region names must be non-empty".into()));
        }
        Ok(Self(names))
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn get(&self, index: usize) -> &str {
        &self.0[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }
}

impl Default for RegionNames {
    fn default() -> Self {
        Self((1..=N_REGIONS).map(|i| format!("region_{i:02}")).collect())
    }
}

impl TryFrom<Vec<String>> for RegionNames {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<RegionNames> for Vec<String> {
    fn from(names: RegionNames) -> Self {
        names.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub name: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Set when the coordinates were inferred by the completer.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub completed: bool,
}

impl RegionBox {
    pub fn detected(name: impl Into<String>, coords: BoxCoords, score: f64) -> Self {
        let [x1, y1, x2, y2] = coords;
        Self {
            name: name.into(),
            x1,
            y1,
            x2,
            y2,
            detected: true,
            score: Some(score),
            completed: false,
        }
    }

    /// Placeholder for a region the detector did not find.
    pub fn undetected(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            x1: 0.0,
            y1: 0.0,
            x2: 0.0,
            y2: 0.0,
            detected: false,
            score: None,
            completed: false,
        }
    }

    pub fn coords(&self) -> BoxCoords {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Detected or completed, with a non-degenerate extent.
    pub fn is_usable(&self) -> bool {
        (self.detected || self.completed) && self.x1 < self.x2 && self.y1 < self.y2
    }

    fn validate(&self) -> Result<()> {
        let coords = self.coords();
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput(format!(
                "box '{}' has coordinates outside [0, 1]: {coords:?}",
                self.name
            )));
        }
        if (self.detected || self.completed) && !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::InvalidInput(format!(
                "box '{}' is degenerate: {coords:?}",
                self.name
            )));
        }
        if self.detected != self.score.is_some() {
            return Err(Error::InvalidInput(format!(
                "box '{}' must carry a score iff detected",
                self.name
            )));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!(
                    "box '{}' score {s} outside [0, 1]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Exactly one box per configured region name, in name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub boxes: Vec<RegionBox>,
}

impl RegionSet {
    pub fn new(boxes: Vec<RegionBox>, names: &RegionNames) -> Result<Self> {
        let set = Self { boxes };
        set.validate(names)?;
        Ok(set)
    }

    pub fn validate(&self, names: &RegionNames) -> Result<()> {
        check_len(N_REGIONS, self.boxes.len())?;
        for (b, name) in self.boxes.iter().zip(names.as_slice()) {
            if &b.name != name {
                return Err(Error::InvalidInput(format!(
                    "expected region '{name}', found '{}'",
                    b.name
                )));
            }
            b.validate()?;
        }
        Ok(())
    }

    /// Every region detected with the given score.
    pub fn from_layout(layout: &Layout, names: &RegionNames, score: f64) -> Self {
        Self {
            boxes: layout
                .iter()
                .zip(names.as_slice())
                .map(|(c, n)| RegionBox::detected(n.clone(), *c, score))
                .collect(),
        }
    }

    pub fn detected_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.detected).count()
    }

    pub fn all_usable(&self) -> bool {
        self.boxes.iter().all(RegionBox::is_usable)
    }
}

/// One detector proposal: a box and a score for each region class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BoxCoords,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProposalSet {
    pub proposals: Vec<Proposal>,
}

impl ProposalSet {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.proposals.iter().enumerate() {
            check_len(N_REGIONS, p.scores.len())?;
            if p.scores
                .iter()
                .chain(&p.bbox)
                .any(|v| !(0.0..=1.0).contains(v))
            {
                return Err(Error::InvalidInput(format!(
                    "proposal {i} has values outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Lowest index wins on ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Each proposal is claimed by its top-scoring class. A region is detected
/// when it claims at least one proposal and takes the claimed proposal it
/// scores highest; ties go to the earlier proposal.
pub fn select_regions(ps: &ProposalSet, names: &RegionNames) -> Result<RegionSet> {
    ps.validate()?;
    let mut claimed: [Option<(usize, f64)>; N_REGIONS] = [None; N_REGIONS];
    for (idx, p) in ps.proposals.iter().enumerate() {
        let class = argmax(&p.scores);
        let score = p.scores[class];
        match claimed[class] {
            Some((_, best)) if best >= score => {}
            _ => claimed[class] = Some((idx, score)),
        }
    }
    let boxes = claimed
        .iter()
        .zip(names.as_slice())
        .map(|(claim, name)| match claim {
            Some((idx, score)) => {
                let b = &ps.proposals[*idx].bbox;
                if b[0] < b[2] && b[1] < b[3] {
                    RegionBox::detected(name.clone(), *b, *score)
                } else {
                    RegionBox::undetected(name.clone())
                }
            }
            None => RegionBox::undetected(name.clone()),
        })
        .collect();
    Ok(RegionSet { boxes })
}

/// Intersection over union of two boxes; zero when either is empty.
pub fn iou(a: &BoxCoords, b: &BoxCoords) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |c: &BoxCoords| (c[2] - c[0]).max(0.0) * (c[3] - c[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
