//! Procedural building code: AST, parser, canonical serializer, repeat
//! regularizer, and the dimension-driven expander that turns code into
//! asset instantiations.
//!
//! ```text
//! code     := building+
//! building := "building" IDENT "{" ("dims" NUM NUM NUM)? level+ "}"
//! level    := "level" IDENT ("x" INT)? "{" facade ("|" facade)* "}"
//! facade   := item+
//! item     := "(" item+ ")" "*"? | IDENT "*"?
//! ```
//!
//! Facades are listed front, right, back, left. A level with a single facade
//! uses it on all four sides; two facades alternate (front/back, right/left).

mod expand;
mod manifest;
mod parse;
mod regularize;
mod serialize;

pub use expand::{expand, facade_min_length, natural_dims, Instantiation, InstantiationList};
pub use manifest::{
    parse_instantiation_import, parse_manifest, resolve, AssetSpec, InstanceTransform, Manifest,
};
pub use parse::{parse, parse_all};
pub use regularize::{raw_code, raw_dims, regularize, RawLevel};
pub use serialize::{serialize, serialize_all};

use std::fmt;

use thiserror::Error;

/// Source location. Spans never take part in AST equality, so a parsed tree
/// compares equal to a hand-built one.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
    pub offset: usize,
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProceduralCode {
    pub building_id: String,
    pub dims: Option<[f64; 3]>,
    pub levels: Vec<Level>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub id: String,
    pub repeat_count: usize,
    pub facades: Vec<Facade>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Facade {
    pub items: Vec<Item>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    Token { asset_id: String, scalable: bool, span: Span },
    Group { items: Vec<Item>, repeatable: bool, span: Span },
}

impl Item {
    pub fn token(asset_id: &str) -> Self {
        Item::Token { asset_id: asset_id.to_string(), scalable: false, span: Span::default() }
    }

    pub fn span(&self) -> Span {
        match self {
            Item::Token { span, .. } | Item::Group { span, .. } => *span,
        }
    }

    /// Visits every token in order, descending into groups.
    pub fn for_each_token<'a>(&'a self, f: &mut impl FnMut(&'a str, Span)) {
        match self {
            Item::Token { asset_id, span, .. } => f(asset_id, *span),
            Item::Group { items, .. } => items.iter().for_each(|i| i.for_each_token(f)),
        }
    }
}

impl ProceduralCode {
    pub fn asset_ids(&self) -> Vec<(&str, Span)> {
        let mut out = Vec::new();
        for level in &self.levels {
            for facade in &level.facades {
                for item in &facade.items {
                    item.for_each_token(&mut |id, span| out.push((id, span)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("syntax error at {span}: {message}")]
    Syntax { span: Span, message: String },
    #[error("unknown asset ids: {}", .0.join(", "))]
    UnknownAssets(Vec<String>),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("building {building}, level {level}, facade {facade}: {message}")]
    Infeasible { building: String, level: String, facade: usize, message: String },
    #[error("building {building}, level {level}, facade {facade}: {message}")]
    Ambiguous { building: String, level: String, facade: usize, message: String },
    #[error("invalid code: {0}")]
    Invalid(String),
}

impl GrammarError {
    pub fn span(&self) -> Option<Span> {
        match self {
            GrammarError::Syntax { span, .. } => Some(*span),
            _ => None,
        }
    }
}
