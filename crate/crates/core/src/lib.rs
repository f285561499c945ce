pub mod biascorrect;
pub mod cli;
pub mod credits;
pub mod donorpool;
pub mod inference;
pub mod panel;
pub mod report;
pub mod scsolver;
pub mod simgen;
pub mod simplex;
pub mod validation;
