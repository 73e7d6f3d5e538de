//! Modality bookkeeping for a multi-subject dataset index.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MODALITIES: [&str; 6] = ["CT", "PD", "T1", "T2", "MP-RAGE", "PET"];

const BUNDLED_INDEX: &str = include_str!("../../data/rire_index.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSubject {
    pub id: String,
    pub modalities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub subjects: Vec<IndexSubject>,
}

impl DatasetIndex {
    /// Subject/modality listing of the public RIRE collection.
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_INDEX).expect("bundled index parses")
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut ids = std::collections::HashSet::new();
        for s in &self.subjects {
            if !ids.insert(&s.id) {
                return Err(format!("duplicate subject {:?}", s.id));
            }
            if let Some(m) = s.modalities.iter().find(|m| !MODALITIES.contains(&m.as_str())) {
                return Err(format!("subject {:?}: unknown modality {m:?}", s.id));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> ModalityCounts {
        let mut all = [0; 6];
        let mut with_ct = [0; 5];
        for s in &self.subjects {
            let has = |m: &str| s.modalities.iter().any(|x| x == m);
            let ct = has("CT");
            for (n, m) in MODALITIES.iter().enumerate() {
                if has(m) {
                    all[n] += 1;
                    if ct && n > 0 {
                        with_ct[n - 1] += 1;
                    }
                }
            }
        }
        ModalityCounts { all, with_ct }
    }
}

/// Per-modality subject counts in [`MODALITIES`] order; `with_ct` omits the
/// CT column and counts only subjects that have a CT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModalityCounts {
    pub all: [usize; 6],
    pub with_ct: [usize; 5],
}

/// Published counts for the RIRE collection.
pub const RIRE_COUNTS: ModalityCounts = ModalityCounts {
    all: [17, 14, 19, 18, 9, 8],
    with_ct: [12, 17, 16, 9, 6],
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetReport {
    pub subjects: usize,
    pub counts: ModalityCounts,
    pub expected: ModalityCounts,
}

impl DatasetReport {
    pub fn new(index: &DatasetIndex, expected: ModalityCounts) -> Self {
        DatasetReport {
            subjects: index.subjects.len(),
            counts: index.counts(),
            expected,
        }
    }

    pub fn passed(&self) -> bool {
        self.counts == self.expected
    }
}

impl fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} subjects", self.subjects)?;
        write!(f, "{:<10}", "")?;
        for m in MODALITIES {
            write!(f, "{m:>9}")?;
        }
        writeln!(f)?;
        let row = |f: &mut fmt::Formatter<'_>, label: &str, values: &[usize], skip_ct: bool| -> fmt::Result {
            write!(f, "{label:<10}")?;
            if skip_ct {
                write!(f, "{:>9}", "")?;
            }
            for v in values {
                write!(f, "{v:>9}")?;
            }
            writeln!(f)
        };
        row(f, "all", &self.counts.all, false)?;
        row(f, "  expect", &self.expected.all, false)?;
        row(f, "with CT", &self.counts.with_ct, true)?;
        row(f, "  expect", &self.expected.with_ct, true)?;
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}
