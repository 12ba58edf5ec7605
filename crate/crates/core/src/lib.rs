//! Open-vocabulary labeling of vision-network neurons.
//!
//! Given a layer's summarized activations over a probe set, image embeddings
//! of the same probe set and text embeddings of a concept vocabulary from a
//! joint image/text encoder, every neuron is labeled with the concept whose
//! image-concept agreement best matches the neuron's activation profile.
//!
//! The engine never runs a model; all matrices arrive as tensor files written
//! by an extraction adapter (see [`tensorio`]).

pub mod analysis;
pub mod concept_space;
pub mod dissector;
pub mod error;
pub mod evaluation;
pub mod numeric;
pub mod similarity;
pub mod tensorio;

pub use concept_space::{
    build_concept_activations, concept_probabilities, ConceptActivationMatrix,
    ConceptProbabilities, PreparedEmbeddings,
};
pub use dissector::{
    dissect_layer, score_matrix, stream_score_matrix, ActivationMatrix, DissectConfig, NeuronLabel,
    ScoreMatrix,
};
pub use error::{Error, Result};
pub use similarity::{MembershipSchedule, SimilarityConfig, SimilarityKind};
pub use tensorio::{ConceptSet, SummaryKind, TensorFile, TensorMeta, TensorTag};
