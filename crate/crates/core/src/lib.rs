pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod seed;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use corpus::{CatalogItem, TagScheme, Vocabulary};
pub use error::{Error, Result};
pub use model::{EncoderConfig, Parameters, TokenBatch};
pub use objectives::TripletScores;
pub use tensor::{Gradients, Graph, OpKind, Tensor, Var};
pub use trainer::{Mode, ModelSpec, TrainConfig, Trainer};
