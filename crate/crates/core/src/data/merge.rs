use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{LabelMap, IGNORE_VALUE};
use crate::error::{MadmError, Result};

/// Maps source label ids onto a merged class set. Ids that are absent from
/// the table, or mapped to `null`, become the ignore value, so the mapping
/// is total over `0..=255`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMerge {
    pub num_classes: usize,
    #[serde(default)]
    pub names: Vec<String>,
    pub table: BTreeMap<u8, Option<u8>>,
}

impl ClassMerge {
    pub fn identity(num_classes: usize) -> Self {
        Self {
            num_classes,
            names: Vec::new(),
            table: (0..num_classes as u8).map(|c| (c, Some(c))).collect(),
        }
    }

    /// Cityscapes train ids onto the 11 depth/event evaluation classes.
    pub fn cityscapes_11() -> Self {
        Self::from_json(include_str!("../../data/merge_cityscapes_11.json")).expect("bundled table")
    }

    /// Cityscapes train ids onto the 9 infrared evaluation classes.
    pub fn cityscapes_9() -> Self {
        Self::from_json(include_str!("../../data/merge_cityscapes_9.json")).expect("bundled table")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes >= IGNORE_VALUE as usize {
            return Err(MadmError::Config(format!(
                "merged class count {} out of range",
                self.num_classes
            )));
        }
        if !self.names.is_empty() && self.names.len() != self.num_classes {
            return Err(MadmError::Config(format!(
                "{} class names for {} classes",
                self.names.len(),
                self.num_classes
            )));
        }
        if let Some((src, dst)) = self
            .table
            .iter()
            .find_map(|(s, d)| d.filter(|d| *d as usize >= self.num_classes).map(|d| (s, d)))
        {
            return Err(MadmError::Config(format!(
                "source id {src} maps to {dst}, beyond {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// The full 256-entry lookup table.
    pub fn lut(&self) -> [u8; 256] {
        let mut lut = [IGNORE_VALUE; 256];
        for (&s, d) in &self.table {
            lut[s as usize] = d.unwrap_or(IGNORE_VALUE);
        }
        lut
    }

    pub fn apply(&self, raw: &[u8], height: usize, width: usize) -> Result<LabelMap> {
        let lut = self.lut();
        LabelMap::new(raw.iter().map(|&v| lut[v as usize]).collect(), height, width, self.num_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_match_their_class_lists() {
        let m11 = ClassMerge::cityscapes_11();
        assert_eq!(m11.names.len(), 11);
        let lut = m11.lut();
        assert_eq!(m11.names[lut[10] as usize], "sky");
        assert_eq!(m11.names[lut[13] as usize], "vehicle");
        assert_eq!(m11.names[lut[12] as usize], "person");
        assert_eq!(lut[255], IGNORE_VALUE);
        let m9 = ClassMerge::cityscapes_9();
        assert_eq!(m9.names.len(), 9);
        assert!(!m9.names.iter().any(|n| n == "fence" || n == "wall"));
        let lut = m9.lut();
        assert_eq!((lut[3], lut[4]), (IGNORE_VALUE, IGNORE_VALUE));
        // every merged class has at least one source id
        for m in [&m11, &m9] {
            let lut = m.lut();
            for c in 0..m.num_classes as u8 {
                assert!(lut.contains(&c), "class {c} unreachable");
            }
        }
    }

    #[test]
    fn out_of_range_targets_are_rejected() {
        let bad = r#"{"num_classes": 2, "table": {"0": 0, "1": 2}}"#;
        assert!(ClassMerge::from_json(bad).is_err());
    }
}
