//! Split persistence: ordered sample-id lists with the spec in a header,
//! re-loadable bit-exactly.

use super::{Split, SplitError};
use std::path::Path;

pub fn write_split(split: &Split, path: &Path) -> Result<(), SplitError> {
    let json = serde_json::to_string_pretty(split).map_err(|e| SplitError::Io(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))
}

pub fn read_split(path: &Path) -> Result<Split, SplitError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| SplitError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::{SplitMethod, SplitSpec};

    #[test]
    fn round_trip_bit_exact() {
        let split = Split {
            spec: SplitSpec::new(SplitMethod::Random { test_fraction: 0.2 }, 7),
            train_ids: vec![crate::sample::SampleId::new("d", "s1", 4.5)],
            test_ids: vec![crate::sample::SampleId::new("d", "s2", 4.5)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        write_split(&split, &path).unwrap();
        let back = read_split(&path).unwrap();
        assert_eq!(back, split);
        // a second write produces identical bytes
        let first = std::fs::read(&path).unwrap();
        write_split(&back, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
