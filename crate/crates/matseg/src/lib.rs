//! File formats, the ONNX backend and the `matseg` command line on top of
//! [`matseg_core`].

pub mod cli;
pub mod config;
pub mod evaluate;
pub mod io;
pub mod neural;
pub mod render;
pub mod run;
