//! Building generation from regular code and rule-based toy-city layouts.

mod layout;
mod library;

pub use layout::{
    boundary_polygon, generate_layout, generate_secondary_roads, partition_blocks, place_buildings, place_decorations, Block, CityConfig, CityLayout,
    Decoration, Footprint, LayoutInput, Placement, Point, RegionProfile, Road,
};
pub use library::{
    building_checkpoint, city_from_layout, generate_building, generate_city, generate_city_checkpoint, generate_city_layout, place_building,
    AssetLibrary,
};

use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::grammar::GrammarError;

#[derive(Debug, Error)]
pub enum CityError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("config: {0}")]
    Config(String),
    #[error("library: {0}")]
    Library(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}
