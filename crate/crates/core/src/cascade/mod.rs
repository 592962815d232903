//! Interactive Cascade reconciliation.
//!
//! Bob drives the protocol: he asks Alice for parities of ranges of seeded
//! permutations of the key and corrects his copy by binary search. Each round
//! batches the queries of every bisection in flight, across iterations, so the
//! number of round trips stays close to the bisection depth. Flips found in a
//! round are applied together and cascade into earlier iterations.

mod bisect;
mod permutation;
mod scheduler;
mod session;

pub use bisect::{binary_bisect, BisectOutcome};
pub use permutation::{iteration_permutation, Permutations};
pub use scheduler::{schedule_instances, CascadeJob, InstanceRecord, InstanceTiming, ThroughputReport};
pub use session::{
    cascade_reconcile, reconcile, serve_cascade, verify_hash, AliceParities, CascadeConfig, CascadeResponder,
    ChannelOracle, LocalOracle, ParityOracle, ReconciledBlock,
};
