// SPDX-License-Identifier: Apache-2.0

//! Syntax and functional-equivalence checking for MiniHDL designs.

pub mod ast;
pub mod check;
pub mod cnf;
pub mod elab;
pub mod miter;
pub mod netlist;
pub mod sat;
