//! Typed generative-workflow toolkit: a workflow IR with three concrete
//! syntaxes, catalog-driven validation, deterministic execution and an
//! LM-driven synthesis loop with iterative repair.

pub mod bench;
pub mod diagnostic;
pub mod executor;
pub mod fixtures;
pub mod frontends;
pub mod inference;
pub mod ir;
pub mod registry;
pub mod testing;
pub mod validator;

pub use diagnostic::{is_executable, Diagnostic, ErrorCategory, Location, Severity, Span};
pub use executor::{execute, Backend, ExecutionTrace, SimulatedBackend};
pub use frontends::{convert, emit, parse, ParseOutcome, SyntaxStyle};
pub use ir::{Edge, IrError, Modality, NodeInstance, ParamMap, ParamValue, PortRef, Workflow};
pub use registry::{FunctionSchema, ParamKind, ParamSpec, PortSpec, Registry, RegistryError};
pub use validator::{check, check_source};
