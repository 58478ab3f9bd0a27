use thiserror::Error;

use crate::group::GroupElement;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("group spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("torsion order {0} is invalid, orders must be at least 2")]
    InvalidTorsionOrder(u32),

    #[error("torsion orders violate divisibility: m_{index} = {current} does not divide m_{next_index} = {next}", next_index = index + 1)]
    DivisibilityViolation { index: usize, current: u32, next: u32 },

    #[error("group must have rank + number of torsion factors >= 1")]
    TrivialGroup,

    #[error("group has {0} coordinates, at most {max} are supported", max = crate::group::MAX_COORDS)]
    TooManyCoordinates(usize),

    #[error("generator set contains the identity")]
    IdentityInGenerators,

    #[error("generator set is not symmetric: inverse of {0} is missing")]
    AsymmetricGenerators(GroupElement),

    #[error("generator {0} is listed more than once")]
    DuplicateGenerator(GroupElement),

    #[error("generator set is empty")]
    EmptyGenerators,

    #[error("generator set does not generate the group (lattice index {index})")]
    NonGenerating { index: String },

    #[error("torsion quotient is degenerate: {0}")]
    DegenerateQuotient(String),

    #[error("memory budget exceeded: {needed} elements requested, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },

    #[error("query at time {query} is beyond the record horizon {horizon}")]
    OutOfHorizon { query: u32, horizon: u32 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("generator set is not invariant under the symmetry {0}")]
    NotInvariant(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed record: {0}")]
    Format(String),
}
