//! Byzantine-resilient distributed hypothesis testing for mobile agents on a grid.
//!
//! Agents follow periodic paths, observe each other through a noisy
//! range-limited sensor, and share beliefs with whoever is within
//! communication range. Good agents run a resilient update rule
//! ([`belief`]) so that their beliefs converge to the true assignment of
//! good and bad identities even though bad agents share arbitrary beliefs.
//!
//! The [`simulator`] module ties everything together; [`io`] reads scenario
//! files and writes traces.

pub mod adversary;
pub mod belief;
pub mod error;
pub mod grid;
pub mod hypothesis;
pub mod io;
pub mod observation;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};

/// Scenarios shipped with the library, by name.
pub mod bundled {
    use crate::error::Result;
    use crate::io::parse_scenario;
    use crate::simulator::ScenarioSpec;

    const SOURCES: [(&str, &str); 3] = [
        ("bundled-5agent", include_str!("../scenarios/bundled-5agent.toml")),
        ("bundled-12agent", include_str!("../scenarios/bundled-12agent.toml")),
        ("single-observer", include_str!("../scenarios/single-observer.toml")),
    ];

    pub fn names() -> impl Iterator<Item = &'static str> {
        SOURCES.iter().map(|(n, _)| *n)
    }

    pub fn source(name: &str) -> Option<&'static str> {
        SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }

    /// Parse a bundled scenario; `None` for an unknown name.
    pub fn load(name: &str) -> Option<Result<ScenarioSpec>> {
        source(name).map(parse_scenario)
    }
}
