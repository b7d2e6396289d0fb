//! Network components: encodings, layers, the encoder, the modulated UNet
//! denoiser, the baseline decoder, ray geometry, and view aggregation.

pub mod aggregate;
pub mod decoder;
pub mod encoder;
pub mod latent;
pub mod layers;
pub mod posenc;
pub mod rays;
pub mod unet;

pub use aggregate::{aggregate_mean, aggregate_transformer, AggregationMethod, AggregatorConfig};
pub use decoder::DecoderConfig;
pub use encoder::{EncoderConfig, PoseConditioning};
pub use latent::SectionLayout;
pub use layers::DropoutMode;
pub use posenc::PosEncodingConfig;
pub use rays::{Camera, Intrinsics, RayCoords, RayGrid, RayRepresentation};
pub use unet::{ModulationVariant, SiteTap, UNetConfig};
