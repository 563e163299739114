//! Finite-space toolkit for no-arbitrage theory in large financial markets.
//!
//! Scenario trees stand in for filtered probability spaces; on top of them
//! sit stochastic integration, Emery-distance estimates, admissible
//! portfolio algebra, two reference large markets and LP-based detectors.

pub mod detect;
pub mod emery;
pub mod error;
pub mod lp;
pub mod markets;
pub mod portfolio;
pub mod probspace;
pub mod process;

pub use detect::{
    naflvr_report, na_check, na_closure_check, nupbr_scan, separating_polytope, ArbitrageCertificate, FloorKind,
    MeasurePolytope, NaVerdict, NoArbitrageReport, PolytopeMode, ReportOptions,
};
pub use emery::{emery_distance, emery_distance_oracle, ucp_distance, CandidateFamily, EmeryEstimate, Provenance};
pub use error::{Error, Result};
pub use markets::{
    builtin_market, AssetSpec, BinaryLargeMarket, CoefficientVector, CounterexampleMarket, MarketConfig, OnePeriodMarket,
};
pub use portfolio::{
    admissibility_level, AssetUniverse, SwitchPlan, TruncationDecomposition, WealthProcess, WealthProvenance,
};
pub use probspace::{condexp, ScenarioTree, TimeGrid, TreeBuilder};
pub use process::{stochastic_integral, stop, AdaptedProcess, PredictableStrategy, StoppingTime};
