//! Pure image mathematics: rasters, additive compositing, light transforms,
//! foreground masking and PNG serialization.

mod ops;
mod png_io;
mod raster;
mod transform;

pub use ops::{composite, mask_background_light, residual_light, SynthesisParams};
pub use png_io::{
    decode_image, decode_mask, encode_image, encode_mask, load_image, load_light, load_mask, save_image,
    save_light, save_mask,
};
pub use raster::{clamp01, Image, LightImage, Mask, CHANNELS, MIN_SIDE};
pub use transform::{
    apply_transform, flip_horizontal, flip_vertical, invert_geometry, rotate_quarter, translate, LightTransform,
};
