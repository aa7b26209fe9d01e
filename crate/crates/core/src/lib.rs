//! Coagulation-fragmentation Markov chains on partitions of the unit interval,
//! Poisson-Dirichlet samplers, and Monte Carlo checks of their invariance
//! properties.

pub mod exec;
pub mod functionals;
pub mod harness;
pub mod kernel;
pub mod partition;
pub mod pd;
pub mod quadrature;
pub mod sigma;
pub mod stats;

pub use exec::Execution;
pub use functionals::{Functional, LocalView, TestFunction};
pub use harness::{ExperimentReport, HarnessError, Verdict};
pub use kernel::{apply_kernel, enumerate_transitions, step, KernelError, KernelParams, TransitionTable};
pub use partition::{Partition, PartitionError};
pub use quadrature::ExtendedReal;
pub use sigma::{classify, ChainClassification, RecurrenceClass, SigmaError, SigmaSpec, SupportClass};
