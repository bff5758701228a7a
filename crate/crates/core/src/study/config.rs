use crate::fem::Preconditioner;
use crate::geometry::TorusGeometry;
use crate::helmholtz::{GradientMode, NormalSource, PhaseEval, RhsWeight, VariableSource};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}': {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("cannot read configuration {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

/// Parameters of a study run. Every field has a key in the flat
/// `key = value` configuration format, see [`StudyConfig::set`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub torus: TorusGeometry,
    pub relations: Vec<u32>,
    pub h_max: f64,
    pub h_min: f64,
    pub anchor_h: f64,
    pub anchor_eps: f64,
    /// Normals solved with in E3.
    pub normal_sources: Vec<NormalSource>,
    /// Variables sampled in E1 and E3.
    pub variable_source: VariableSource,
    pub gradient_mode: GradientMode,
    pub rhs_weight: RhsWeight,
    pub phase_eval: PhaseEval,
    pub c_pen: f64,
    pub delta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
    pub band_degree: u32,
    pub bulk_degree: u32,
    pub box_half_width: f64,
    pub coarse_h: f64,
    pub outdir: PathBuf,
    pub vtk_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Record wall times; off gives byte-identical reruns.
    pub timing: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            torus: TorusGeometry::benchmark(),
            relations: vec![2, 3, 4, 5],
            h_max: 0.25,
            h_min: 1.0 / 64.0,
            anchor_h: 0.25,
            anchor_eps: 0.4,
            normal_sources: vec![NormalSource::A, NormalSource::B],
            variable_source: VariableSource::SampledAnalytic,
            gradient_mode: GradientMode::Recovered,
            rhs_weight: RhsWeight::Discrete,
            phase_eval: PhaseEval::Composed,
            c_pen: 10.0,
            delta: 1e-6,
            tol: 1e-10,
            max_iter: 200_000,
            preconditioner: Preconditioner::BlockJacobi,
            band_degree: 5,
            bulk_degree: 2,
            box_half_width: 2.0,
            coarse_h: 0.5,
            outdir: PathBuf::from("results"),
            vtk_dir: None,
            threads: None,
            timing: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|item| parse(key, item.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason: "expected true or false".into(),
        }),
    }
}

impl StudyConfig {
    /// Sets one key. Keys match the command-line flags without dashes,
    /// `-` and `_` being interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key_norm = key.trim().replace('_', "-");
        let value = value.trim();
        match key_norm.as_str() {
            "relation" => {
                self.relations = if value == "all" {
                    vec![2, 3, 4, 5]
                } else {
                    parse_list(key, value)?
                }
            }
            "h-max" => self.h_max = parse(key, value)?,
            "h-min" => self.h_min = parse(key, value)?,
            "anchor-h" => self.anchor_h = parse(key, value)?,
            "anchor-eps" => self.anchor_eps = parse(key, value)?,
            "normal-source" => self.normal_sources = parse_list(key, value)?,
            "variable-source" => self.variable_source = parse(key, value)?,
            "gradient-mode" => self.gradient_mode = parse(key, value)?,
            "rhs-weight" => self.rhs_weight = parse(key, value)?,
            "phase-eval" => self.phase_eval = parse(key, value)?,
            "cpen" => self.c_pen = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "max-iter" => self.max_iter = parse(key, value)?,
            "preconditioner" => {
                self.preconditioner = match value {
                    "none" => Preconditioner::None,
                    "jacobi" => Preconditioner::Jacobi,
                    "block-jacobi" => Preconditioner::BlockJacobi,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected none, jacobi or block-jacobi".into(),
                        })
                    }
                }
            }
            "band-degree" => self.band_degree = parse(key, value)?,
            "bulk-degree" => self.bulk_degree = parse(key, value)?,
            "outdir" => self.outdir = PathBuf::from(value),
            "export-vtk" => {
                self.vtk_dir = match value {
                    "false" | "no" | "off" | "" => None,
                    "true" | "yes" | "on" => Some(self.outdir.join("vtk")),
                    dir => Some(PathBuf::from(dir)),
                }
            }
            "threads" => self.threads = Some(parse(key, value)?),
            "timing" => self.timing = parse_bool(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.trim().into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            if key.trim().is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, value: String, reason: &str| {
            Err(ConfigError::InvalidValue {
                key: key.into(),
                value,
                reason: reason.into(),
            })
        };
        if self.relations.is_empty() || self.relations.iter().any(|p| !(2..=5).contains(p)) {
            return invalid("relation", format!("{:?}", self.relations), "exponents must lie in 2..=5");
        }
        if !(self.h_min > 0.0 && self.h_max >= self.h_min) {
            return invalid("h-min", self.h_min.to_string(), "need 0 < h-min <= h-max");
        }
        if self.normal_sources.is_empty() {
            return invalid("normal-source", String::new(), "at least one normal source");
        }
        if self.variable_source == VariableSource::Analytic && self.normal_sources.iter().any(|n| *n != NormalSource::Analytic) {
            return invalid(
                "variable-source",
                self.variable_source.to_string(),
                "discrete normals need sampled variables",
            );
        }
        if !(self.c_pen > 0.0) {
            return invalid("cpen", self.c_pen.to_string(), "must be positive");
        }
        if !(self.delta > 0.0) {
            return invalid("delta", self.delta.to_string(), "must be positive");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return invalid("tol", self.tol.to_string(), "must lie in (0, 1)");
        }
        if self.threads == Some(0) {
            return invalid("threads", "0".into(), "must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_key_values_with_comments() {
        let mut cfg = StudyConfig::default();
        cfg.apply_text(
            "# ladder\nrelation = 2,3\nh_min = 0.0625 # trailing\n\nnormal-source = B\nvariable-source=sampled-mesh\ncpen = 20\ntiming = false\nexport-vtk = out/vtk\n",
        )
        .unwrap();
        assert_eq!(cfg.relations, vec![2, 3]);
        assert_eq!(cfg.h_min, 0.0625);
        assert_eq!(cfg.normal_sources, vec![NormalSource::B]);
        assert_eq!(cfg.variable_source, VariableSource::SampledMesh);
        assert_eq!(cfg.c_pen, 20.0);
        assert!(!cfg.timing);
        assert_eq!(cfg.vtk_dir, Some(PathBuf::from("out/vtk")));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_lines_keys_and_values() {
        let mut cfg = StudyConfig::default();
        assert_eq!(cfg.apply_text("relation 2"), Err(ConfigError::Syntax { line: 1 }));
        assert_eq!(cfg.apply_text("colour = red"), Err(ConfigError::UnknownKey("colour".into())));
        assert!(matches!(cfg.apply_text("tol = fast"), Err(ConfigError::InvalidValue { .. })));
        cfg.set("relation", "7").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relation_all_expands() {
        let mut cfg = StudyConfig::default();
        cfg.set("relation", "2").unwrap();
        cfg.set("relation", "all").unwrap();
        assert_eq!(cfg.relations, vec![2, 3, 4, 5]);
    }
}
