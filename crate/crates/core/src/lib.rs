//! Build multi-task software-domain instruction datasets, query
//! chat-completions endpoints, parse their answers and score them.

pub mod artifact;
pub mod corpus;
pub mod instruct;
pub mod metrics;
pub mod negsample;
pub mod parse;
pub mod rng;
pub mod evalclient;
pub mod mockmodel;
pub mod report;
pub mod cli;
