//! Sign-quantized federated learning over Rayleigh-fading uplinks.
//!
//! Workers send one sign per gradient coordinate; a packet in outage arrives
//! fully flipped. The server takes a majority vote and steps against it.
//! [`optimizer`] chooses CPU frequency, rate and transmit power per worker,
//! [`analysis`] evaluates the vote-correctness bounds and [`fl_sim`] runs the
//! end-to-end training loop on MNIST.

pub mod analysis;
pub mod error;
pub mod fl_sim;
pub mod optimizer;
pub mod rng;
pub mod sign_codec;
pub mod wireless;

pub use error::{Error, Result};
pub use optimizer::{PlanSolution, TraceRow};
pub use rng::{RandomStream, StreamPurpose};
pub use sign_codec::{
    apply_sign_update, majority_vote, sign_quantize, stochastic_sign_encode, EncodedSigns,
    GradientVector, SignVector, StochasticSignConfig,
};
pub use wireless::{DeviceProfile, RadioPlan, TransmissionOutcome};
