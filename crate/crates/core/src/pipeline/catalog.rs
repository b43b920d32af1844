use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prognostic,
    DynamicForcing,
    CyclicForcing,
    Static,
    Diagnostic,
}

impl Role {
    pub fn is_input(self) -> bool {
        self != Role::Diagnostic
    }

    pub fn is_output(self) -> bool {
        matches!(self, Role::Prognostic | Role::Diagnostic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Surface,
    Mb500,
    Mb200,
    Soil1,
    Soil2,
    Soil3,
    Soil4,
    /// Basin-scale scalar broadcast over the grid.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDef {
    pub name: String,
    pub role: Role,
    pub units: String,
    pub level: Level,
    pub nonneg: bool,
    /// Class labels that bypass normalization.
    pub categorical: bool,
    pub source: String,
    /// Position in the assembled input stack.
    pub input_index: Option<usize>,
    /// Position in the output stack.
    pub output_index: Option<usize>,
}

/// The variable roster with channel bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableCatalog {
    vars: Vec<VariableDef>,
}

// name, role, units, level, nonneg, categorical, source
type Row = (&'static str, Role, &'static str, Level, bool, bool, &'static str);

const STANDARD: [Row; 34] = {
    use Level::*;
    use Role::*;
    [
        ("u500", Prognostic, "m s-1", Mb500, false, false, "era5"),
        ("u200", Prognostic, "m s-1", Mb200, false, false, "era5"),
        ("v500", Prognostic, "m s-1", Mb500, false, false, "era5"),
        ("v200", Prognostic, "m s-1", Mb200, false, false, "era5"),
        ("z500", Prognostic, "m2 s-2", Mb500, false, false, "era5"),
        ("z200", Prognostic, "m2 s-2", Mb200, false, false, "era5"),
        ("qtot500", Prognostic, "kg kg-1", Mb500, false, false, "era5"),
        ("qtot200", Prognostic, "kg kg-1", Mb200, false, false, "era5"),
        ("t2m", Prognostic, "K", Surface, false, false, "gldas2"),
        ("d2m", Prognostic, "K", Surface, false, false, "era5"),
        ("precip_1d", Prognostic, "mm day-1", Surface, true, false, "imerg"),
        ("sp", Prognostic, "Pa", Surface, false, false, "gldas2"),
        ("evap", Prognostic, "mm day-1", Surface, true, false, "gldas2"),
        ("pevap", Prognostic, "mm day-1", Surface, true, false, "gldas2"),
        ("enso", DynamicForcing, "K", Scalar, false, false, "sst"),
        ("iod", DynamicForcing, "K", Scalar, false, false, "sst"),
        ("nsw", DynamicForcing, "W m-2", Surface, false, false, "gldas2"),
        ("wind_speed", DynamicForcing, "m s-1", Surface, false, false, "gldas2"),
        ("wind_gust", DynamicForcing, "m s-1", Surface, false, false, "era5"),
        ("nsw_clim", CyclicForcing, "W m-2", Surface, false, false, "gldas2"),
        ("lsm", Static, "1", Surface, false, true, "era5"),
        ("hv_type", Static, "1", Surface, false, true, "era5"),
        ("hv_cover", Static, "1", Surface, false, false, "era5"),
        ("lv_type", Static, "1", Surface, false, true, "era5"),
        ("lv_cover", Static, "1", Surface, false, false, "era5"),
        ("precip_30d", Diagnostic, "mm", Surface, true, false, "imerg"),
        ("ndvi", Diagnostic, "1", Surface, true, false, "modis"),
        ("evi", Diagnostic, "1", Surface, true, false, "modis"),
        ("lai", Diagnostic, "m2 m-2", Surface, true, false, "modis"),
        ("fpar", Diagnostic, "1", Surface, true, false, "modis"),
        ("sm1", Diagnostic, "kg m-2", Soil1, true, false, "gldas2"),
        ("sm2", Diagnostic, "kg m-2", Soil2, true, false, "gldas2"),
        ("sm3", Diagnostic, "kg m-2", Soil3, true, false, "gldas2"),
        ("sm4", Diagnostic, "kg m-2", Soil4, true, false, "gldas2"),
    ]
};

/// Input stack order: prognostic, dynamic forcing, cyclic forcing, static.
const INPUT_ORDER: [Role; 4] = [Role::Prognostic, Role::DynamicForcing, Role::CyclicForcing, Role::Static];
/// Output stack order: prognostic, diagnostic.
const OUTPUT_ORDER: [Role; 2] = [Role::Prognostic, Role::Diagnostic];

impl VariableCatalog {
    /// The 25-input / 23-output roster.
    pub fn standard() -> Self {
        let vars = STANDARD
            .iter()
            .map(|&(name, role, units, level, nonneg, categorical, source)| VariableDef {
                name: name.to_string(),
                role,
                units: units.to_string(),
                level,
                nonneg,
                categorical,
                source: source.to_string(),
                input_index: None,
                output_index: None,
            })
            .collect();
        Self::from_defs(vars).expect("standard catalog is consistent")
    }

    /// Assigns channel indices from roles, keeping listing order within a
    /// role.
    pub fn from_defs(mut vars: Vec<VariableDef>) -> Result<Self> {
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].iter().any(|o| o.name == v.name) {
                return Err(Error::Config(format!("duplicate variable {}", v.name)));
            }
        }
        let mut next = 0;
        for role in INPUT_ORDER {
            for v in vars.iter_mut().filter(|v| v.role == role) {
                v.input_index = Some(next);
                next += 1;
            }
        }
        let mut next = 0;
        for role in OUTPUT_ORDER {
            for v in vars.iter_mut().filter(|v| v.role == role) {
                v.output_index = Some(next);
                next += 1;
            }
        }
        Ok(Self { vars })
    }

    pub fn vars(&self) -> &[VariableDef] {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Result<&VariableDef> {
        self.vars
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::Data(format!("variable {name} not in catalog")))
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &VariableDef> {
        self.vars.iter().filter(move |v| v.role == role)
    }

    /// Input-stack variables in channel order.
    pub fn inputs(&self) -> Vec<&VariableDef> {
        let mut v: Vec<_> = self.vars.iter().filter(|v| v.input_index.is_some()).collect();
        v.sort_by_key(|v| v.input_index);
        v
    }

    /// Output-stack variables in channel order.
    pub fn outputs(&self) -> Vec<&VariableDef> {
        let mut v: Vec<_> = self.vars.iter().filter(|v| v.output_index.is_some()).collect();
        v.sort_by_key(|v| v.output_index);
        v
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs().len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs().len()
    }

    pub fn n_prognostic(&self) -> usize {
        self.with_role(Role::Prognostic).count()
    }

    pub fn input_index(&self, name: &str) -> Result<usize> {
        self.get(name)?
            .input_index
            .ok_or_else(|| Error::Data(format!("{name} is not an input channel")))
    }

    pub fn output_index(&self, name: &str) -> Result<usize> {
        self.get(name)?
            .output_index
            .ok_or_else(|| Error::Data(format!("{name} is not an output channel")))
    }

    /// Output channels clamped at zero.
    pub fn nonneg_outputs(&self) -> Vec<usize> {
        self.outputs()
            .iter()
            .filter(|v| v.nonneg)
            .filter_map(|v| v.output_index)
            .collect()
    }

    /// Hex SHA-256 of the canonical serialization; checkpoints record it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.vars).expect("catalog serializes");
        hex::encode(Sha256::digest(&json))
    }
}
