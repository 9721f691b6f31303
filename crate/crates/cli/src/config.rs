//! Versioned JSON problem configuration.

use std::path::Path;

use ddrci::cc_template::TemplateSpec;
use ddrci::linops::Matrix;
use ddrci::polytope::Polytope;
use ddrci::runtime::{
    build_example_plant, ControllerMode, DisturbanceSampler, ExamplePlant, ExampleSetup, PlantModel, SchedulingLaw,
};
use ddrci::synthesis::SynthesisOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default LP plugin.
pub const SOLVER_ENV: &str = "DDRCI_LP_SOLVER";

/// `{x : H x ≤ h}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    #[serde(rename = "H")]
    pub h_mat: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl SetSpec {
    pub fn polytope(&self, name: &str) -> Result<Polytope<f64>, CliError> {
        let m = Matrix::from_rows(&self.h_mat).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        Polytope::new(m, self.h.clone()).map_err(|e| CliError::Input(format!("{name}: {e}")))
    }

    pub fn from_polytope(p: &Polytope<f64>) -> Self {
        Self {
            h_mat: p.h_matrix().to_rows(),
            h: p.h_vector().to_vec(),
        }
    }
}

/// Explicit true system `A^j`, `B^j` for model-based runs and simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub input_range: [f64; 2],
    /// Overrides the plant's scheduling law.
    pub scheduling: Option<SchedulingLaw>,
    pub reduce: bool,
    pub reduce_tol: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            input_range: [-1.0, 1.0],
            scheduling: None,
            reduce: true,
            reduce_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub controller: ControllerMode,
    pub disturbance: DisturbanceSampler,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<ExamplePlant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(rename = "X")]
    pub x: SetSpec,
    #[serde(rename = "U")]
    pub u: SetSpec,
    #[serde(rename = "W")]
    pub w: SetSpec,
    #[serde(rename = "P_vertices")]
    pub p_vertices: Vec<Vec<f64>>,
    pub template: TemplateSpec,
    /// Volume directions; `C` when absent.
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub synthesis: SynthesisOptions<f64>,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl ProblemConfig {
    /// Config equivalent to the built-in example.
    pub fn for_example(which: ExamplePlant) -> Self {
        let s = build_example_plant::<f64>(which);
        Self {
            schema: SCHEMA_VERSION,
            plant: Some(which),
            model: None,
            x: SetSpec::from_polytope(&s.x_set),
            u: SetSpec::from_polytope(&s.u_set),
            w: SetSpec::from_polytope(&s.w_set),
            p_vertices: s.p_vertices,
            template: s.template,
            d: None,
            synthesis: SynthesisOptions::default(),
            data: DataSpec::default(),
            simulation: SimulationSpec::default(),
            seeds: vec![1, 2, 3, 4, 5],
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        match raw.get("schema").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Input(format!(
                    "config schema {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(CliError::Input("config lacks an integer `schema` field".into())),
        }
        let solver_given = raw.get("synthesis").and_then(|s| s.get("solver")).is_some();
        let mut cfg: Self = serde_json::from_value(raw).map_err(|e| CliError::Input(format!("config: {e}")))?;
        if !solver_given {
            if let Ok(id) = std::env::var(SOLVER_ENV) {
                cfg.synthesis.solver = id;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn plant_model(&self) -> Result<Option<PlantModel<f64>>, CliError> {
        if let Some(m) = &self.model {
            let conv = |blocks: &[Vec<Vec<f64>>]| {
                blocks
                    .iter()
                    .map(|b| Matrix::from_rows(b).map_err(|e| CliError::Input(format!("model: {e}"))))
                    .collect::<Result<Vec<_>, _>>()
            };
            let plant =
                PlantModel::new(conv(&m.a)?, conv(&m.b)?).map_err(|e| CliError::Input(format!("model: {e}")))?;
            return Ok(Some(plant));
        }
        Ok(self.plant.map(|p| build_example_plant::<f64>(p).plant))
    }

    pub fn scheduling(&self) -> SchedulingLaw {
        self.data
            .scheduling
            .or_else(|| self.plant.map(|p| build_example_plant::<f64>(p).scheduling))
            .unwrap_or(SchedulingLaw::RandomConvex)
    }

    pub fn d_matrix(&self) -> Result<Option<Matrix<f64>>, CliError> {
        self.d
            .as_ref()
            .map(|d| Matrix::from_rows(d).map_err(|e| CliError::Input(format!("D: {e}"))))
            .transpose()
    }

    /// Resolves sets and checks that every dimension agrees.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let x_set = self.x.polytope("X")?;
        let u_set = self.u.polytope("U")?;
        let w_set = self.w.polytope("W")?;
        let n = x_set.dim();
        if w_set.dim() != n {
            return Err(CliError::Input(format!("W has dimension {}, X has {n}", w_set.dim())));
        }
        let s = self.p_vertices.first().map_or(0, Vec::len);
        if s == 0 || self.p_vertices.iter().any(|p| p.len() != s) {
            return Err(CliError::Input(
                "P_vertices must be nonempty rows of equal length".into(),
            ));
        }
        let plant = self.plant_model()?;
        if let Some(p) = &plant {
            if p.n() != n || p.m() != u_set.dim() || p.s() != s {
                return Err(CliError::Input(format!(
                    "plant has (n, m, s) = ({}, {}, {}), sets give ({n}, {}, {s})",
                    p.n(),
                    p.m(),
                    p.s(),
                    u_set.dim()
                )));
            }
        }
        Ok(Resolved {
            x_set,
            u_set,
            w_set,
            plant,
        })
    }

    /// An [`ExampleSetup`] for data generation and simulation.
    pub fn setup(&self) -> Result<ExampleSetup<f64>, CliError> {
        let r = self.resolve()?;
        let plant = r
            .plant
            .ok_or_else(|| CliError::Input("this command needs a `plant` or `model` in the config".into()))?;
        Ok(ExampleSetup {
            plant,
            x_set: r.x_set,
            u_set: r.u_set,
            w_set: r.w_set,
            p_vertices: self.p_vertices.clone(),
            template: self.template.clone(),
            scheduling: self.scheduling(),
        })
    }
}

pub struct Resolved {
    pub x_set: Polytope<f64>,
    pub u_set: Polytope<f64>,
    pub w_set: Polytope<f64>,
    pub plant: Option<PlantModel<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_ONE: &str = include_str!("../../../configs/example1.json");
    const EXAMPLE_TWO: &str = include_str!("../../../configs/example2.json");

    #[test]
    fn bundled_configs_match_builtin_plants() {
        for (text, which) in [
            (EXAMPLE_ONE, ExamplePlant::DoubleIntegrator),
            (EXAMPLE_TWO, ExamplePlant::VanDerPol),
        ] {
            let cfg = ProblemConfig::parse(text).unwrap();
            let built = build_example_plant::<f64>(which);
            let setup = cfg.setup().unwrap();
            assert_eq!(setup.plant, built.plant);
            assert_eq!(setup.p_vertices, built.p_vertices);
            assert_eq!(setup.scheduling, built.scheduling);
            assert_eq!(cfg.template, built.template);
            assert_eq!(setup.x_set, built.x_set);
            assert_eq!(setup.u_set, built.u_set);
            assert_eq!(setup.w_set, built.w_set);
        }
    }

    #[test]
    fn explicit_model_without_plant() {
        let text = r#"{
            "schema": 1,
            "model": { "A": [[[0.5]]], "B": [[[1.0]]] },
            "X": { "H": [[1], [-1]], "h": [5, 5] },
            "U": { "H": [[1], [-1]], "h": [1, 1] },
            "W": { "H": [[1], [-1]], "h": [0.1, 0.1] },
            "P_vertices": [[1]],
            "template": { "kind": "explicit", "C": [[1], [-1]] }
        }"#;
        let cfg = ProblemConfig::parse(text).unwrap();
        let plant = cfg.plant_model().unwrap().unwrap();
        assert_eq!((plant.n(), plant.m(), plant.s()), (1, 1, 1));
        assert_eq!(cfg.scheduling(), SchedulingLaw::RandomConvex);
        assert!(cfg.resolve().is_ok());
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let text = EXAMPLE_ONE.replace(
            "\"P_vertices\": [[1, 0], [0, 1]]",
            "\"P_vertices\": [[1, 0, 0], [0, 1, 0]]",
        );
        let err = ProblemConfig::parse(&text).unwrap().resolve().err().unwrap();
        assert_eq!(err.exit_code(), 4);
    }
}
