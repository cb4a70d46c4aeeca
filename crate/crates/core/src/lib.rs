//! ROI-pair correspondence registration.
//!
//! Two images are segmented into candidate regions, each region is embedded
//! as a feature prototype, and prototypes are matched into corresponding
//! pairs. Pairs can be converted into a dense displacement field and
//! evaluated with Dice and target registration error.

pub mod embed;
pub mod error;
pub mod fit;
pub mod grid;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod segment;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
