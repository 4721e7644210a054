/// Labelled DSEC-Semantic sequences of one split. Metadata only; no loader
/// ships for the real dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DsecSplit {
    pub name: &'static str,
    pub sequences: &'static [&'static str],
    pub frames: usize,
}

pub const DSEC_SPLITS: [DsecSplit; 2] = [
    DsecSplit {
        name: "train",
        sequences: &[
            "zurich_city_00_a",
            "zurich_city_01_a",
            "zurich_city_02_a",
            "zurich_city_04_a",
            "zurich_city_05_a",
            "zurich_city_06_a",
            "zurich_city_07_a",
            "zurich_city_08_a",
        ],
        frames: 8082,
    },
    DsecSplit {
        name: "test",
        sequences: &["zurich_city_13_a", "zurich_city_14_c", "zurich_city_15_a"],
        frames: 2809,
    },
];

/// Rows removed at the bottom of each 640x480 frame, giving 640x440.
pub const DSEC_CROP_BOTTOM_ROWS: usize = 40;
