use std::fmt;

/// Ensemble member selector: the winning policy (`1`) or the losing policy (`2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyLabel {
    Winning,
    Losing,
}

impl PolicyLabel {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(PolicyLabel::Winning),
            2 => Some(PolicyLabel::Losing),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            PolicyLabel::Winning => 1,
            PolicyLabel::Losing => 2,
        }
    }

    /// Index into a `[winning, losing]` pair.
    pub fn index(self) -> usize {
        self.number() as usize - 1
    }

    /// Classifier target: 1.0 for winning, 0.0 for losing.
    pub fn target(self) -> f64 {
        match self {
            PolicyLabel::Winning => 1.0,
            PolicyLabel::Losing => 0.0,
        }
    }
}

impl fmt::Display for PolicyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}
