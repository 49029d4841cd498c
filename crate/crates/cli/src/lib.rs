//! Command-line front end: channel files, subcommands and output formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod commands;
pub mod emit;
