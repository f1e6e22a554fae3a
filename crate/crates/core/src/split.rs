//! Advisory check of dataset split sizes against a reference expectation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub sequences: usize,
    /// Frame totals are optional; when absent only sequences are compared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
}

impl SplitCounts {
    pub fn new(sequences: usize, frames: usize) -> Self {
        Self {
            sequences,
            frames: Some(frames),
        }
    }

    pub fn sequences_only(sequences: usize) -> Self {
        Self {
            sequences,
            frames: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: SplitCounts,
    pub validation: SplitCounts,
    pub test: SplitCounts,
}

impl SplitManifest {
    /// 150 pitch sequences (30,000 frames) of the reference dataset.
    pub const REFERENCE: SplitManifest = SplitManifest {
        train: SplitCounts {
            sequences: 105,
            frames: Some(21_050),
        },
        validation: SplitCounts {
            sequences: 15,
            frames: Some(2_962),
        },
        test: SplitCounts {
            sequences: 30,
            frames: Some(5_988),
        },
    };

    fn named(&self) -> [(&'static str, SplitCounts); 3] {
        [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SplitReport {
    Match,
    Mismatch { splits: Vec<SplitMismatch> },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitMismatch {
    pub split: &'static str,
    pub expected: SplitCounts,
    pub found: SplitCounts,
}

impl std::fmt::Display for SplitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitReport::Match => f.write_str("match"),
            SplitReport::Skipped => f.write_str("skipped"),
            SplitReport::Mismatch { splits } => {
                let names: Vec<_> = splits.iter().map(|m| m.split).collect();
                write!(f, "mismatch: {}", names.join(", "))
            }
        }
    }
}

/// Compares `counts` against `expectation`. Never fails; `None` skips.
pub fn validate_split(counts: &SplitManifest, expectation: Option<&SplitManifest>) -> SplitReport {
    let Some(expected) = expectation else {
        return SplitReport::Skipped;
    };
    let splits: Vec<SplitMismatch> = expected
        .named()
        .into_iter()
        .zip(counts.named())
        .filter_map(|((split, exp), (_, found))| {
            let frames_differ = matches!((exp.frames, found.frames), (Some(a), Some(b)) if a != b);
            (exp.sequences != found.sequences || frames_differ).then_some(SplitMismatch {
                split,
                expected: exp,
                found,
            })
        })
        .collect();
    if splits.is_empty() {
        SplitReport::Match
    } else {
        for m in &splits {
            log::warn!(
                "split `{}` differs from expectation: {:?} vs {:?}",
                m.split,
                m.found,
                m.expected
            );
        }
        SplitReport::Mismatch { splits }
    }
}
