//! Zone-level traffic demand synthesis.
//!
//! One PPO agent per detector zone learns how many vehicles to inject into a
//! mesoscopic simulation so that the zone's detector reproduces an hourly
//! target count. Agents improve together through serverless federated
//! averaging over a neighbor topology.

pub mod baseline;
pub mod calibrate;
pub mod dfl;
pub mod fixtures;
pub mod mesosim;
pub mod metrics;
pub mod ppo;
pub mod scenario;
pub mod seeds;
