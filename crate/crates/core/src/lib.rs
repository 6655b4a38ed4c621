pub mod assembly;
pub mod city;
pub mod grammar;
pub mod render;
pub mod splat;
pub mod synthetic;
pub mod train;
