use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("market has no agents or no items")]
    EmptyMarket,
    #[error("negative value or capacity at {0}")]
    NegativeValue(String),
    #[error("capacities sum to {sum}, expected {expected}")]
    CapacityMismatch { sum: String, expected: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cannot parse rational {0:?}")]
    Parse(String),
    #[error("no affordable unit bundle for agent {agent}")]
    InfeasibleDemand { agent: usize },
    #[error("degenerate prices: {0}")]
    DegeneratePrices(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("utility {given} does not match the best bundle value {best}")]
    UtilityMismatch { given: String, best: String },
    #[error("bundle-level clearing system is infeasible")]
    InfeasibleBundleSystem,
    #[error("sign of an interval straddling zero is undetermined: {0}")]
    IndeterminateSign(String),
    #[error("polynomial solver found no certified solution")]
    NoSolutionFound,
    #[error("too many items: {m} > {limit}")]
    TooManyItems { m: usize, limit: usize },
    #[error("too many agents: {n} > {limit}")]
    TooManyAgents { n: usize, limit: usize },
    #[error("mechanism requires unit capacities")]
    NonUnitCapacities,
    #[error("agent {agent} has no unique most preferred item")]
    NonUniqueTopItem { agent: usize },
    #[error("search ended without a verified equilibrium: {0}")]
    IncompleteSearch(String),
    #[error("item {item} receives no price proposal")]
    UnpricedItem { item: usize },
    #[error("agent {agent} outbids the anchor price of item {item}")]
    ProposalExceedsAnchor { agent: usize, item: usize },
    #[error("structure is inconsistent at item {item}")]
    StructureInconsistent { item: usize },
    #[error("input is not an equilibrium: {0}")]
    NotAnEquilibrium(String),
    #[error("allocation does not decompose into price-1 bundles: {0}")]
    DecompositionFailed(String),
    #[error("unknown demo {0:?}")]
    UnknownDemo(String),
}

pub type Result<T> = std::result::Result<T, Error>;
