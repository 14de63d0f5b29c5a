use std::fmt;

/// Identity of one paired observation: subject and timepoint.
///
/// Ordering is `(subject, timepoint)`; it is the tie-break order for
/// neighbor search.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId {
    pub subject: String,
    pub timepoint: u32,
}

impl RecordId {
    pub fn new(subject: impl Into<String>, timepoint: u32) -> Self {
        RecordId {
            subject: subject.into(),
            timepoint,
        }
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.subject, self.timepoint)
    }
}
