pub mod benchmark;
pub mod config;
pub mod db;
pub mod diagnostics;
pub mod difficulty;
pub mod discovery;
pub mod fixture;
pub mod pipeline;
pub mod provider;
pub mod taskgen;
pub mod value;
