//! Experiment runner for the `copula-vi` command: configuration, the `fit`,
//! `sample`, `reproduce` and `check` subcommands, and their output files.

pub mod check;
pub mod config;
pub mod error;
pub mod output;
pub mod reproduce;
pub mod run;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
