pub mod attention;
pub mod cli;
pub mod controllers;
pub mod cps;
pub mod encoder;
pub mod numerics;
pub mod sim;
pub mod trainer;
