//! Dense arrays, a reverse-mode tape, feed-forward networks and Adam.

mod adam;
mod array;
mod net;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::DenseArray;
pub use net::{
    init_weights, net_backward, net_forward, DropoutSource, FeedForwardNet, Linear, Mode,
    NetGradients, NetParams, NetSpec, NetTape,
};
pub use tape::{Gradients, NodeId, Tape};
