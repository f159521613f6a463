//! Universal channel coding for parametric channel families.

pub mod channels;
pub mod combinatorics;
pub mod error;
pub mod infomeasures;
pub mod mixtures;
pub mod simulator;
pub mod numerics;

pub use channels::{
    ChannelFamily, ChannelPoint, ConditionTag, ExpFamilyComponent, FamilyKind, FiniteLaw,
    GaussianLaw, Law, MixtureLaw, Output, OutputLaw, OutputSpace, ParamBox, ParameterSet,
};
pub use error::{Error, Result};
