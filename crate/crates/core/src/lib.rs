//! Query suggestion for single-round interactive recommendation.
//!
//! Candidate queries are generated from a user's recent items along three
//! meta paths ([`metapath`]), ranked by an attention-GRU click model
//! ([`ranker`]), and a clicked query is turned into item recommendations
//! ([`retrieval`]). [`service`] ties the stages into a suggest / feedback /
//! recommend loop; [`pipeline`] runs the whole thing on synthetic data.

pub mod corpus;
pub mod metapath;
pub mod nn;
pub mod pipeline;
pub mod ranker;
pub mod retrieval;
pub mod service;

pub use corpus::{
    ActionType, BehaviorEvent, CategoryId, ContextFeatures, Corpus, Instance, ItemId, QueryId,
    ScenarioId, Timestamp, UserId, WordId,
};
pub use metapath::{CandidateFeatures, CandidateSet, IndexSet, MetaPathConfig, PathType};
pub use ranker::{RankerConfig, RankingModel, Variant};
