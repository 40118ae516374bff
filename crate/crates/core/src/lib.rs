pub mod corpus;
pub mod agreement;
pub mod glmm;
pub mod attribution;
pub mod prompting;
pub mod runner;
pub mod evalreport;
