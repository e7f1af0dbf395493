use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(v: usize) -> Self {
                Self(v as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(UserId);
dense_id!(ItemId);
dense_id!(QueryId);
dense_id!(CategoryId);
dense_id!(ScenarioId);
dense_id!(
    /// Index into the shared word vocabulary used by item titles and query texts.
    WordId
);

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ActionType {
    Click = 1,
    Purchase = 2,
    Favor = 3,
    Cart = 4,
}

impl ActionType {
    pub const ALL: [ActionType; 4] = [
        ActionType::Click,
        ActionType::Purchase,
        ActionType::Favor,
        ActionType::Cart,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ActionType::Click),
            2 => Some(ActionType::Purchase),
            3 => Some(ActionType::Favor),
            4 => Some(ActionType::Cart),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based slot, used to pick the per-action modulation matrix.
    pub fn slot(self) -> usize {
        self as usize - 1
    }
}

impl TryFrom<u8> for ActionType {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ActionType::from_code(v).ok_or_else(|| format!("invalid action type {v}"))
    }
}

impl From<ActionType> for u8 {
    fn from(a: ActionType) -> u8 {
        a.code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub user: UserId,
    pub item: ItemId,
    pub action: ActionType,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLogRecord {
    pub query: QueryId,
    pub retrieved_items: Vec<ItemId>,
}

/// Sparse categorical feature: `(field, value)`; value ids share one vocabulary.
pub type DiscreteFeat = (u32, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub continuous_feats: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title_tokens: Vec<WordId>,
    pub category: CategoryId,
    pub discrete_feats: Vec<DiscreteFeat>,
    pub continuous_feats: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub text_tokens: Vec<WordId>,
    pub top_categories: [CategoryId; 3],
    pub discrete_feats: Vec<DiscreteFeat>,
    pub continuous_feats: Vec<f64>,
}

/// A named bundle of categories and keywords; consuming a member item activates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub categories: Vec<CategoryId>,
    pub keywords: Vec<WordId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Spring,
    Summer,
    Autumn,
    Winter,
}

impl Season {
    pub fn slot(self) -> usize {
        match self {
            Season::Spring => 0,
            Season::Summer => 1,
            Season::Autumn => 2,
            Season::Winter => 3,
        }
    }

    /// Northern-hemisphere meteorological seasons.
    pub fn from_month(month: u32) -> Self {
        match month {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Autumn,
            _ => Season::Winter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub season: Season,
    pub special_day: bool,
    #[serde(rename = "hour")]
    pub hour_of_day: u8,
}

impl ContextFeatures {
    /// Context derived from a UTC timestamp; special days must be supplied by the caller.
    pub fn at(ts: Timestamp, special_day: bool) -> Self {
        use chrono::{DateTime, Datelike, Timelike};
        let dt = DateTime::from_timestamp(ts, 0).unwrap_or_default();
        ContextFeatures {
            season: Season::from_month(dt.month()),
            special_day,
            hour_of_day: dt.hour() as u8,
        }
    }
}

pub const MAX_HISTORY: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub user: UserId,
    pub query: QueryId,
    pub label: u8,
    pub context: ContextFeatures,
    /// Oldest first, at most [`MAX_HISTORY`] events, all strictly before `decision_time`.
    pub history: Vec<BehaviorEvent>,
    pub decision_time: Timestamp,
}

impl Instance {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}
