use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of vertebra classes: C1-C7, T1-T12, L1-L5.
pub const CLASS_COUNT: usize = 24;

const CERVICAL: usize = 7;
const THORACIC: usize = 12;

/// Anatomical region of a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Cervical,
    Thoracic,
    Lumbar,
}

/// One of the 24 vertebra classes, indexed 0 (C1) to 23 (L5) in
/// cranial-to-caudal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertebraLabel(u8);

impl VertebraLabel {
    pub fn new(index: usize) -> Result<Self> {
        if index < CLASS_COUNT {
            Ok(VertebraLabel(index as u8))
        } else {
            Err(Error::invalid(
                "label-range",
                format!("label index {index} outside [0, 23]"),
            ))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn region(self) -> Region {
        match self.index() {
            i if i < CERVICAL => Region::Cervical,
            i if i < CERVICAL + THORACIC => Region::Thoracic,
            _ => Region::Lumbar,
        }
    }

    pub fn name(self) -> String {
        let i = self.index();
        match self.region() {
            Region::Cervical => format!("C{}", i + 1),
            Region::Thoracic => format!("T{}", i - CERVICAL + 1),
            Region::Lumbar => format!("L{}", i - CERVICAL - THORACIC + 1),
        }
    }

    pub fn all() -> impl Iterator<Item = VertebraLabel> {
        (0..CLASS_COUNT as u8).map(VertebraLabel)
    }
}

/// Parses a canonical name such as `"T12"`, ignoring case.
pub fn label_from_name(name: &str) -> Result<VertebraLabel> {
    let bad = || Error::invalid("label-name", format!("unknown vertebra name {name:?}"));
    let trimmed = name.trim();
    let mut chars = trimmed.chars();
    let region = chars.next().ok_or_else(bad)?.to_ascii_uppercase();
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return Err(bad());
    }
    let n: usize = digits.parse().map_err(|_| bad())?;
    let (offset, count) = match region {
        'C' => (0, CERVICAL),
        'T' => (CERVICAL, THORACIC),
        'L' => (CERVICAL + THORACIC, CLASS_COUNT - CERVICAL - THORACIC),
        _ => return Err(bad()),
    };
    if n == 0 || n > count {
        return Err(bad());
    }
    Ok(VertebraLabel((offset + n - 1) as u8))
}

impl fmt::Display for VertebraLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for VertebraLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        label_from_name(s)
    }
}

impl TryFrom<usize> for VertebraLabel {
    type Error = Error;
    fn try_from(i: usize) -> Result<Self> {
        VertebraLabel::new(i)
    }
}

// Written as the canonical name; read from either a name or an integer index.
impl Serialize for VertebraLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for VertebraLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Index(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Index(i) => VertebraLabel::new(i),
            Repr::Name(n) => label_from_name(&n),
        }
        .map_err(serde::de::Error::custom)
    }
}
