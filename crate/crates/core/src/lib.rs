//! Grid path planning with classical baselines and a learned, differentiable
//! A* search trained by bilevel self-supervision.
//!
//! The crate is organised bottom-up:
//!
//! * [`gridmap`] : occupancy grids, generators, instance sampling, map files
//! * [`search`] : Dijkstra, weighted A* and Jump Point Search
//! * [`autodiff`] : a small reverse-mode tensor engine
//! * [`dastar`] : matrix-form A* whose node selection is differentiable
//! * [`encoder`] : the U-Net that predicts the selection bias `P`
//! * [`trainer`] : imperative (self-supervised) and supervised training
//! * [`bench`] : metrics and the benchmark harness

pub mod gridmap;
pub mod search;
pub mod autodiff;
pub mod dastar;
pub mod encoder;
pub mod trainer;
pub mod bench;
