//! Self-supervised traversal labels: vehicle poses, wheel footprints, per-map
//! annotation and patch tokens.

mod annotate;
mod footprint;
pub mod io;
mod pose;
mod tokens;

pub use annotate::{annotate_map, Annotation, LabelGrid, LabelWindow};
pub use footprint::{polygon_area, rasterize_polygon, transform_footprint, Footprint};
pub use pose::{transform_to_current, VehiclePose};
pub use tokens::{
    extract_tokens, patch_origin, PatchToken, PseudoLabel, TokenConfig, TokenId, CELL_VALUES,
    DEFAULT_CHANNEL_CENTER, DEFAULT_CHANNEL_SCALE,
};
