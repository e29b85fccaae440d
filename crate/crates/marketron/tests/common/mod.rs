#![allow(dead_code)]

pub mod kernel_checks;
