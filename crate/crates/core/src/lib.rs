pub mod annotator;
pub mod clock;
pub mod config;
pub mod consensus;
pub mod corpus;
pub mod fixture;
pub mod metrics;
pub mod ratelimit;
pub mod report;
pub mod resample;
pub mod retrieval;
