//! Command-line interface.

pub fn run() {}
