//! In-context operator networks for differential equations.
//!
//! The crate covers the whole pipeline: sampling conditions from Gaussian
//! processes, producing (condition, quantity-of-interest) pairs with
//! classical solvers or by constructing the solution first, packing
//! demonstrations into masked prompts, training a small encoder transformer
//! and evaluating how its error depends on the number of demonstrations.

pub mod error;
pub mod evalbench;
pub mod families;
pub mod gridfn;
pub mod io;
pub mod model;
pub mod prompt;
pub mod randproc;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
pub use gridfn::{Coord, FunctionSample, Grid1D, Grid2D};
pub use randproc::{RbfKernelSpec, RngStream};
pub use families::{Corpus, DemoRecord, GenSettings, OperatorSpec};
pub use model::{Checkpoint, ModelConfig, ModelParams};
pub use prompt::{Prompt, Role, Token};
pub use training::TrainConfig;
