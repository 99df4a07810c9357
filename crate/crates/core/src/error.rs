use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown contest `{0}`")]
    UnknownContest(String),

    #[error("ground truth unavailable: election has no card records (live mode)")]
    GroundTruthUnavailable,

    #[error("contest `{contest}` does not use {expected}")]
    WrongSocialChoice {
        contest: String,
        expected: &'static str,
    },

    #[error("supermajority threshold {0} is outside (1/2, 1)")]
    BadThreshold(f64),

    #[error("invalid assorter `{label}`: {reason}")]
    BadAssorter { label: String, reason: String },

    #[error("no CVRs contain contest `{0}`")]
    EmptyCvrList(String),

    #[error("reported outcome not confirmed by CVRs: assorter `{label}` has margin {margin}")]
    NonPositiveMargin { label: String, margin: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("manual vote record required for id `{id}` (draw {draw})")]
    MissingMvr { id: String, draw: u64 },

    #[error("manual vote record required: card with requested id `{0}` was returned")]
    MvrRequired(String),

    #[error("retriever returned card handle {0}, which is not in the physical pile")]
    UnknownCard(usize),

    #[error("observation {x} outside [0, {upper}]")]
    OutOfRange { x: f64, upper: f64 },

    #[error("assertion untestable: population upper bound {0} must exceed 1/2")]
    Untestable(f64),

    #[error("population exhausted after {0} draws")]
    Exhausted(u64),

    #[error("audit is no longer in progress")]
    NotInProgress,

    #[error("size mismatch: {cvrs} CVRs vs {cards} cards")]
    SizeMismatch { cvrs: usize, cards: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible election spec: {0}")]
    Infeasible(String),

    #[error("operator escalated to a full hand count: {0}")]
    Escalated(String),

    #[error("failed to parse {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(what: impl Into<String>, msg: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.to_string(),
        }
    }
}
