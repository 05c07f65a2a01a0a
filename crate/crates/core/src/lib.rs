pub mod carving;
pub mod casefile;
pub mod digest;
pub mod export;
pub mod fixtures;
pub mod flightlog;
pub mod imaging;
pub mod report;
