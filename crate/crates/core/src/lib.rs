//! Discriminant and counterfactual explanations for a small from-scratch
//! CNN, with synthetic part/attribute data and localization metrics.
//!
//! `no_std` with `alloc`; file formats, the CLI and the HTTP service live in
//! the `scout` crate.

#![no_std]

extern crate alloc;

pub mod attribution;
pub mod dataset;
pub mod explainer;
pub mod grid;
pub mod metrics;
pub mod micronet;
pub mod synthgen;
pub mod tensor;
