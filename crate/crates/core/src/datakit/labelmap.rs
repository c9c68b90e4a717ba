use std::fmt;

use crate::error::{Error, Result};
use crate::objectives::LabelTensor;

/// Raw mask value to class id. Class ids are the positions in `entries`,
/// so they are always `0..N` without gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    entries: Vec<(u8, String)>,
}

impl LabelMap {
    pub fn new(entries: Vec<(u8, String)>) -> Result<Self> {
        if entries.is_empty() || entries.len() > 256 {
            return Err(Error::config("a label map needs 1 to 256 classes"));
        }
        for (i, (raw, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(r, _)| r == raw) {
                return Err(Error::config(format!("raw value {} is mapped twice", raw)));
            }
        }
        Ok(LabelMap { entries })
    }

    /// Object raw 255 to class 0, background raw 0 to class 1.
    pub fn binary(object: &str) -> Self {
        LabelMap {
            entries: vec![(255, object.to_string()), (0, "background".to_string())],
        }
    }

    pub fn multilabel() -> Self {
        let names = [(40, "urban"), (80, "water"), (120, "land"), (160, "tree"), (0, "other")];
        LabelMap {
            entries: names.iter().map(|&(r, n)| (r, n.to_string())).collect(),
        }
    }

    /// Raw values equal the class ids.
    pub fn identity(names: &[&str]) -> Result<Self> {
        Self::new(names.iter().enumerate().map(|(i, n)| (i as u8, n.to_string())).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, n)| n.as_str())
    }

    pub fn class_of(&self, raw: u8) -> Option<u8> {
        self.entries.iter().position(|(r, _)| *r == raw).map(|i| i as u8)
    }

    pub fn raw_of(&self, class: u8) -> Option<u8> {
        self.entries.get(class as usize).map(|(r, _)| *r)
    }

    /// Replaces raw values with class ids.
    pub fn encode(&self, raw: &LabelTensor) -> Result<LabelTensor> {
        let table = self.table(|r| self.class_of(r));
        let [_, h, w] = raw.shape();
        let mut out = raw.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = table[*v as usize].ok_or_else(|| {
                let (s, p) = (i / (h * w), i % (h * w));
                Error::Label(format!(
                    "raw value {} at sample {} row {} col {} has no class",
                    v,
                    s,
                    p / w,
                    p % w
                ))
            })?;
        }
        Ok(out)
    }

    /// Inverse of [`LabelMap::encode`].
    pub fn decode(&self, classes: &LabelTensor) -> Result<LabelTensor> {
        classes.validate(self.num_classes())?;
        let mut out = classes.clone();
        for v in out.data_mut() {
            *v = self.entries[*v as usize].0;
        }
        Ok(out)
    }

    fn table(&self, f: impl Fn(u8) -> Option<u8>) -> [Option<u8>; 256] {
        let mut t = [None; 256];
        for (raw, slot) in t.iter_mut().enumerate() {
            *slot = f(raw as u8);
        }
        t
    }
}

impl fmt::Display for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (raw, name)) in self.entries.iter().enumerate() {
            writeln!(f, "{} -> {} ({})", raw, i, name)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn buildings_are_class_zero() {
        let map = LabelMap::binary("building");
        let raw = LabelTensor::new([1, 1, 4], vec![255, 0, 0, 255]).unwrap();
        assert_eq!(map.encode(&raw).unwrap().data(), &[0, 1, 1, 0]);
    }

    #[test]
    fn multilabel_ids() {
        let map = LabelMap::multilabel();
        let names: Vec<_> = map.names().collect();
        assert_eq!(names, ["urban", "water", "land", "tree", "other"]);
        let raw = LabelTensor::new([1, 1, 5], vec![40, 80, 120, 160, 0]).unwrap();
        assert_eq!(map.encode(&raw).unwrap().data(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn unmapped_value_is_reported() {
        let map = LabelMap::binary("ship");
        let raw = LabelTensor::new([1, 2, 3], vec![0, 0, 0, 0, 7, 7]).unwrap();
        match map.encode(&raw) {
            Err(Error::Label(msg)) => assert!(msg.contains("raw value 7") && msg.contains("row 1 col 1"), "{}", msg),
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn rejects_duplicates() {
        assert!(LabelMap::new(vec![(1, "a".into()), (1, "b".into())]).is_err());
    }

    proptest! {
        #[test]
        fn decode_then_encode(classes in prop::collection::vec(0u8..5, 1..64)) {
            let map = LabelMap::multilabel();
            let n = classes.len();
            let t = LabelTensor::new([1, 1, n], classes).unwrap();
            prop_assert_eq!(map.encode(&map.decode(&t).unwrap()).unwrap(), t);
        }
    }
}
