//! Dense tensors, a reverse-mode tape, and the layers used by the policies.

mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use layers::{
    attention_layer_forward, dense_segment_edges, gcn_layer_forward, mean_adjacency_edges, Activation, AttentionLayer,
    AttentionShape, GcnLayer, GraphEncoder, Linear, Mlp,
};
pub use optim::{clip_grad_norm, global_norm, Adam};
pub use params::{orthogonal, ParamId, ParamStore};
pub use tape::{Edges, Gradients, Segments, Tape, Var};
pub use tensor::Tensor;
