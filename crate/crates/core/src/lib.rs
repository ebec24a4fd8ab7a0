//! Dataset identifiers and the services built around them: local data
//! centers, the profile registry, the master verifier, the permanent-link
//! resolver, the article/dataset correlation store, manuscript scanning and
//! library OpenURL preference links.

pub mod center;
pub mod clock;
pub mod correlation;
pub mod dsid;
pub mod harness;
pub mod manuscript;
pub mod openurl;
pub mod profile;
pub mod query;
pub mod registry;
pub mod remote;
pub mod resolver;
pub mod server;
pub mod verifier;

pub use center::{InventoryRecord, LocalCenter, LocalVerdict};
pub use clock::{Clock, SharedClock, SimClock, SystemClock};
pub use correlation::{Correlation, CorrelationStore, IngestReport};
pub use dsid::{DatasetIdentifier, ParseError, ParseErrorKind};
pub use profile::DataCenterProfile;
pub use registry::{Registry, RegistryConfig, RoutingTable};
pub use resolver::{LinkResolver, ResolutionOutcome, ResolverConfig};
pub use verifier::{MasterVerifier, VerificationResult, VerificationStatus, VerifierConfig};
