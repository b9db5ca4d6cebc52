pub mod grid;
pub mod linalg;
pub mod lp;
pub mod ed;
pub mod nn;
pub mod proxies;
pub mod fixtures;
pub mod scenario;
pub mod sim;
pub mod risk;
pub mod training;
