pub mod codec;
pub mod cost;
pub mod index;
pub mod lru;
pub mod net;
pub mod service;
pub mod store;
pub mod wire;
pub mod workload;
pub mod prefetch;
pub mod sim;
pub mod config;
pub mod calibrate;
pub mod cli;
pub mod manifest;
