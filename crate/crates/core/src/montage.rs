//! Canonical 64-electrode montage.
//!
//! Channel order follows the common 64-channel 10-10 cap layout (front to
//! back, left to right, mastoids included). Every recording in a corpus uses
//! this order unless its manifest overrides `channel_names`.

pub const N_CHANNELS: usize = 64;

pub const CHANNEL_NAMES: [&str; N_CHANNELS] = [
    "Fp1", "Fpz", "Fp2", "AF3", "AF4", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8", "FT7",
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1", "Cz", "C2",
    "C4", "C6", "T8", "M1", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "M2",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO5", "PO3", "POz", "PO4", "PO6",
    "PO8", "CB1", "O1", "Oz", "O2", "CB2",
];

/// Left/right electrode pairs used for the asymmetry coefficient.
pub const SYMMETRIC_PAIRS: [(&str, &str); 6] = [
    ("F7", "F8"),
    ("F3", "F4"),
    ("C3", "C4"),
    ("P3", "P4"),
    ("O1", "O2"),
    ("T7", "T8"),
];

pub fn canonical_names() -> Vec<String> {
    CHANNEL_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn channel_index(names: &[String], name: &str) -> Option<usize> {
    names.iter().position(|n| n.eq_ignore_ascii_case(name))
}

/// Resolves [`SYMMETRIC_PAIRS`] against a channel list.
pub fn pair_indices(names: &[String]) -> Option<Vec<(usize, usize)>> {
    SYMMETRIC_PAIRS
        .iter()
        .map(|(l, r)| Some((channel_index(names, l)?, channel_index(names, r)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn montage_is_unique_and_complete() {
        let set: HashSet<_> = CHANNEL_NAMES.iter().collect();
        assert_eq!(set.len(), N_CHANNELS);
        for required in ["F7", "F8", "Oz", "Pz", "O1", "O2", "F3", "F4", "C3", "C4", "P3", "P4", "T7", "T8"] {
            assert!(CHANNEL_NAMES.contains(&required), "{required}");
        }
        assert_eq!(pair_indices(&canonical_names()).unwrap().len(), 6);
    }
}
