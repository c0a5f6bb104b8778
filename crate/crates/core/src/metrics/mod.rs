//! Agreement and outcome statistics on V_HI measurements.

pub mod agreement;
pub mod ingest;
pub mod overlap;
pub mod regression;
pub mod response;
pub mod svg;
pub mod tdist;

pub use agreement::{bland_altman, AgreementPair, BlandAltmanResult, Timepoint, Transform};
pub use overlap::{composite_reference, dice, DiceResult};
pub use regression::{ols_regression, RegressionResult};
pub use response::{classify_response, response_agreement, AgreementCounts, ResponseTable, SubjectResponse};
