//! Renderer parameter schemas and graphics vectors.
//!
//! A graphics vector holds physical parameter values in schema order.
//! Networks see the normalized form `u = (v - low) / (hi - low)` where `hi`
//! is the finite upper bound used for normalization.

use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RendererId {
    Lipstick,
    Hair,
}

impl RendererId {
    pub const ALL: [RendererId; 2] = [RendererId::Lipstick, RendererId::Hair];

    pub fn as_str(self) -> &'static str {
        match self {
            RendererId::Lipstick => "lipstick",
            RendererId::Hair => "hair",
        }
    }
}

impl fmt::Display for RendererId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RendererId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lipstick" => Ok(RendererId::Lipstick),
            "hair" => Ok(RendererId::Hair),
            other => Err(Error::UnknownRenderer(other.to_string())),
        }
    }
}

/// One named parameter with its physical range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub low: f64,
    /// `+inf` is written as JSON `null`.
    #[serde(serialize_with = "ser_high", deserialize_with = "de_high")]
    pub high: f64,
    pub clamp_high_for_norm: f64,
}

fn ser_high<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_none()
    } else {
        s.serialize_f64(*v)
    }
}

fn de_high<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl ParameterSpec {
    fn bounded(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.to_string(),
            low,
            high,
            clamp_high_for_norm: high,
        }
    }

    /// Upper bound used for validation, normalization and sampling.
    pub fn hi(&self) -> f64 {
        self.high.min(self.clamp_high_for_norm)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.hi()
    }
}

/// Ordered parameter list of one renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSchema {
    pub renderer_id: RendererId,
    pub specs: Vec<ParameterSpec>,
}

/// Built-in schema of a renderer.
pub fn load_schema(renderer: RendererId) -> ParameterSchema {
    let specs = match renderer {
        RendererId::Lipstick => vec![
            ParameterSpec::bounded("opacity", 0.0, 1.0),
            ParameterSpec::bounded("R", 0.0, 255.0),
            ParameterSpec::bounded("G", 0.0, 255.0),
            ParameterSpec::bounded("B", 0.0, 255.0),
            ParameterSpec {
                name: "gloss_amount".into(),
                low: 0.0,
                high: f64::INFINITY,
                clamp_high_for_norm: 10.0,
            },
            ParameterSpec::bounded("gloss_roughness", 0.0, 1.0),
            ParameterSpec::bounded("reflection_intensity", 0.0, 1.0),
        ],
        RendererId::Hair => vec![
            ParameterSpec::bounded("brightness", -0.3, 0.3),
            ParameterSpec::bounded("contrast", 0.5, 2.0),
            ParameterSpec::bounded("exposure", 0.5, 2.0),
            ParameterSpec::bounded("gamma", 0.5, 3.0),
            ParameterSpec::bounded("hue", 0.0, 1.0),
            ParameterSpec::bounded("saturation", 0.0, 3.0),
            ParameterSpec::bounded("blend", -1.0, 1.0),
            ParameterSpec::bounded("intensity", 0.0, 1.0),
            ParameterSpec::bounded("shine", 0.0, 1.0),
        ],
    };
    ParameterSchema {
        renderer_id: renderer,
        specs,
    }
}

/// Parses a renderer id and returns its built-in schema.
pub fn load_schema_by_name(renderer: &str) -> Result<ParameterSchema> {
    Ok(load_schema(renderer.parse()?))
}

/// One out-of-range coordinate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub name: String,
    pub value: f64,
    pub low: f64,
    pub high: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} out of [{},{}] (got {})",
            self.name, self.low, self.high, self.value
        )
    }
}

/// Physical parameter values in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphicsVector {
    pub renderer_id: RendererId,
    pub values: Vec<f64>,
}

impl GraphicsVector {
    pub fn new(renderer_id: RendererId, values: Vec<f64>) -> Self {
        Self {
            renderer_id,
            values,
        }
    }
}

impl ParameterSchema {
    pub fn m(&self) -> usize {
        self.specs.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Lowercase hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// Parses a `.schema.json` document. The spec list must name the
    /// built-in parameters of the renderer in order; ranges must be sane.
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: ParameterSchema =
            serde_json::from_str(text).map_err(|e| Error::data(format!("schema JSON: {e}")))?;
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<()> {
        let builtin = load_schema(self.renderer_id);
        let names: Vec<&str> = self.names().collect();
        let expected: Vec<&str> = builtin.names().collect();
        if names != expected {
            return Err(Error::data(format!(
                "{} schema must list {:?}, found {:?}",
                self.renderer_id, expected, names
            )));
        }
        for s in &self.specs {
            let ok = s.low.is_finite()
                && s.clamp_high_for_norm.is_finite()
                && !s.high.is_nan()
                && s.low < s.high
                && s.clamp_high_for_norm > s.low;
            if !ok {
                return Err(Error::data(format!("parameter {}: invalid range", s.name)));
            }
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.m() {
            return Err(Error::Dimension {
                expected: self.m(),
                got: len,
            });
        }
        Ok(())
    }

    /// Every out-of-range (or non-finite) coordinate of `g`.
    pub fn validate(&self, g: &GraphicsVector) -> Result<Vec<Violation>> {
        if g.renderer_id != self.renderer_id {
            return Err(Error::data(format!(
                "graphics vector for {} checked against {} schema",
                g.renderer_id, self.renderer_id
            )));
        }
        self.validate_values(&g.values)
    }

    pub fn validate_values(&self, values: &[f64]) -> Result<Vec<Violation>> {
        self.check_len(values.len())?;
        Ok(self
            .specs
            .iter()
            .zip(values)
            .enumerate()
            .filter(|(_, (s, &v))| !s.contains(v))
            .map(|(index, (s, &value))| Violation {
                index,
                name: s.name.clone(),
                value,
                low: s.low,
                high: s.hi(),
            })
            .collect())
    }

    /// Fails with the violation list when `g` is out of range.
    pub fn ensure_valid(&self, g: &GraphicsVector) -> Result<()> {
        let v = self.validate(g)?;
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    pub fn normalize(&self, g: &GraphicsVector) -> Result<Vec<f64>> {
        self.ensure_valid(g)?;
        Ok(self
            .specs
            .iter()
            .zip(&g.values)
            .map(|(s, &v)| (v - s.low) / (s.hi() - s.low))
            .collect())
    }

    /// Maps unit values back to physical units, clamping to `[0, 1]` first.
    /// Returns the indices that needed clamping.
    pub fn denormalize(&self, u: &[f64]) -> Result<(GraphicsVector, Vec<usize>)> {
        self.check_len(u.len())?;
        let mut clamped = Vec::new();
        let values = self
            .specs
            .iter()
            .zip(u)
            .enumerate()
            .map(|(j, (s, &x))| {
                let c = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
                if c != x {
                    clamped.push(j);
                }
                s.low + c * (s.hi() - s.low)
            })
            .collect();
        Ok((GraphicsVector::new(self.renderer_id, values), clamped))
    }

    /// Reads a `{name: value}` object; every parameter must be present.
    pub fn params_from_json(&self, value: &serde_json::Value) -> Result<GraphicsVector> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::data("params must be a JSON object"))?;
        for key in obj.keys() {
            if self.index_of(key).is_none() {
                return Err(Error::data(format!(
                    "unknown {} parameter {key:?}",
                    self.renderer_id
                )));
            }
        }
        let values = self
            .specs
            .iter()
            .map(|s| {
                let v = obj
                    .get(&s.name)
                    .ok_or_else(|| Error::data(format!("missing parameter {:?}", s.name)))?;
                v.as_f64()
                    .ok_or_else(|| Error::data(format!("parameter {:?} is not a number", s.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphicsVector::new(self.renderer_id, values))
    }

    /// Serializable `{name: value}` view in schema order.
    pub fn params_map<'a>(&'a self, values: &'a [f64]) -> ParamsMap<'a> {
        ParamsMap {
            schema: self,
            values,
        }
    }
}

pub struct ParamsMap<'a> {
    schema: &'a ParameterSchema,
    values: &'a [f64],
}

impl Serialize for ParamsMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.values.len()))?;
        for (spec, v) in self.schema.specs.iter().zip(self.values) {
            map.serialize_entry(&spec.name, v)?;
        }
        map.end()
    }
}

/// The parameter-file document `{renderer_id, params}` shared by the CLI and
/// the service.
pub fn params_document(schema: &ParameterSchema, g: &GraphicsVector) -> serde_json::Value {
    serde_json::json!({
        "renderer_id": schema.renderer_id,
        "params": serde_json::to_value(schema.params_map(&g.values)).expect("finite params"),
    })
}

/// Reads either a bare `{name: value}` object or a `{renderer_id, params}`
/// document.
pub fn parse_params_document(schema: &ParameterSchema, text: &str) -> Result<GraphicsVector> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::data(format!("params JSON: {e}")))?;
    let inner = match value.get("params") {
        Some(p) if value.get("renderer_id").is_some() => {
            let id: RendererId = serde_json::from_value(value["renderer_id"].clone())
                .map_err(|e| Error::data(format!("params renderer_id: {e}")))?;
            if id != schema.renderer_id {
                return Err(Error::data(format!(
                    "params are for {id}, expected {}",
                    schema.renderer_id
                )));
            }
            if let Some(obj) = value.as_object() {
                if let Some(k) = obj
                    .keys()
                    .find(|k| !["renderer_id", "params", "normalized"].contains(&k.as_str()))
                {
                    return Err(Error::data(format!("unknown params document key {k:?}")));
                }
            }
            p.clone()
        }
        _ => value,
    };
    schema.params_from_json(&inner)
}
