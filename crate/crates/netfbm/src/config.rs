//! Experiment configuration: one TOML file per experiment, validated
//! key-by-key, with defaults echoed into the canonical serialization used
//! for output manifests and hashing.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{Error, Result};
use crate::fbm::{FbmSpec, Normalization};
use crate::graph::{NetworkGraph, NodeCoupling};
use crate::mesh::{EdgePotential, Mesh};
use crate::solver::Formulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Study {
    Stability,
    Moments,
    Yosida,
    Regularity,
    LongTime,
    FullSystem,
}

impl Study {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stability" => Ok(Study::Stability),
            "moments" => Ok(Study::Moments),
            "yosida" => Ok(Study::Yosida),
            "regularity" => Ok(Study::Regularity),
            "longtime" => Ok(Study::LongTime),
            "fullsystem" => Ok(Study::FullSystem),
            other => Err(Error::OutOfRange {
                key: "study".into(),
                value: other.into(),
                reason: "expected one of stability, moments, yosida, regularity, longtime, fullsystem"
                    .into(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Study::Stability => "stability",
            Study::Moments => "moments",
            Study::Yosida => "yosida",
            Study::Regularity => "regularity",
            Study::LongTime => "longtime",
            Study::FullSystem => "fullsystem",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Constant(f64),
    PerEdge(Vec<f64>),
    Samples(Vec<Vec<f64>>),
}

/// Fully resolved experiment description (defaults filled in).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub study: Study,
    pub output_dir: Option<String>,
    pub edges: Vec<(usize, usize)>,
    pub n0: usize,
    pub b: Vec<Vec<f64>>,
    pub b_imag: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub potential: PotentialSpec,
    pub hurst: f64,
    pub normalization: Normalization,
    pub channels: usize,
    pub seed: u64,
    pub n_per_edge: Vec<usize>,
    pub dt: f64,
    pub t_final: f64,
    pub t_max: f64,
    pub mc_samples: usize,
    pub alpha: f64,
    pub yosida_n: Vec<f64>,
    pub formulation: Formulation,
    pub quad_cells: usize,
}

const DEFAULT_N: usize = 32;
const DEFAULT_DT: f64 = 1e-2;
const DEFAULT_MC: usize = 2000;
const DEFAULT_CELLS: usize = 512;

fn out_of_range(key: &str, value: impl std::fmt::Display, reason: &str) -> Error {
    Error::OutOfRange {
        key: key.into(),
        value: format!("{value}"),
        reason: reason.into(),
    }
}

struct Section<'a> {
    name: &'a str,
    table: &'a toml::map::Map<String, Value>,
}

impl<'a> Section<'a> {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.table.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::UnknownKey(format!("{}.{}", self.name, key)));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.table.get(key)
    }

    fn require(&self, key: &str) -> Result<&Value> {
        self.get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing key `{}.{}`", self.name, key)))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(out_of_range(
                &format!("{}.{}", self.name, key),
                v,
                "expected a number",
            )),
        }
    }

    fn usize_val(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(v) => Err(out_of_range(
                &format!("{}.{}", self.name, key),
                v,
                "expected a nonnegative integer",
            )),
        }
    }

    fn string(&self, key: &str) -> Result<Option<&str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(out_of_range(
                &format!("{}.{}", self.name, key),
                v,
                "expected a string",
            )),
        }
    }
}

fn as_matrix(name: &str, v: &Value) -> Result<Vec<Vec<f64>>> {
    let rows = v
        .as_array()
        .ok_or_else(|| out_of_range(name, v, "expected an array of rows"))?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let cols = row
            .as_array()
            .ok_or_else(|| out_of_range(name, row, "expected a numeric row"))?;
        let mut r = Vec::with_capacity(cols.len());
        for x in cols {
            r.push(match x {
                Value::Float(f) => *f,
                Value::Integer(i) => *i as f64,
                other => return Err(out_of_range(name, other, "expected a number")),
            });
        }
        out.push(r);
    }
    Ok(out)
}

/// Parses and validates an experiment config from TOML text, filling
/// defaults (N = 32, dt = 1e-2, MC = 2000, standard normalization).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Value = text
        .parse()
        .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
    let root_table = root
        .as_table()
        .ok_or_else(|| Error::InvalidConfig("top level must be a table".into()))?;

    const ROOT_KEYS: &[&str] = &[
        "study",
        "output_dir",
        "graph",
        "coupling",
        "potential",
        "noise",
        "discretization",
        "study_params",
    ];
    for key in root_table.keys() {
        if !ROOT_KEYS.contains(&key.as_str()) {
            return Err(Error::UnknownKey(key.clone()));
        }
    }

    let section = |name: &'static str| -> Result<Section<'_>> {
        match root_table.get(name) {
            Some(Value::Table(t)) => Ok(Section { name, table: t }),
            Some(v) => Err(out_of_range(name, v, "expected a table section")),
            None => Err(Error::MissingSection(name.into())),
        }
    };

    let study = Study::parse(
        root_table
            .get("study")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::MissingSection("study".into()))?,
    )?;
    let output_dir = root_table
        .get("output_dir")
        .and_then(|v| v.as_str())
        .map(String::from);

    // [graph]
    let graph = section("graph")?;
    graph.check_keys(&["edges", "n0"])?;
    let edges_val = graph.require("edges")?;
    let edges_rows = as_matrix("graph.edges", edges_val)?;
    let mut edges = Vec::with_capacity(edges_rows.len());
    for row in &edges_rows {
        if row.len() != 2 || row.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
            return Err(out_of_range(
                "graph.edges",
                format!("{row:?}"),
                "each edge is a [tail, head] pair of one-based labels",
            ));
        }
        edges.push((row[0] as usize, row[1] as usize));
    }
    let n0 = graph
        .usize_val("n0")?
        .ok_or_else(|| Error::InvalidConfig("missing key `graph.n0`".into()))?;
    let n = edges.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);

    // [coupling]
    let coupling = section("coupling")?;
    coupling.check_keys(&["b", "b_imag", "c"])?;
    let b = match coupling.get("b") {
        Some(v) => as_matrix("coupling.b", v)?,
        None => vec![vec![0.0; n]; n],
    };
    let b_imag = match coupling.get("b_imag") {
        Some(v) => Some(as_matrix("coupling.b_imag", v)?),
        None => None,
    };
    let c = as_matrix("coupling.c", coupling.require("c")?)?;

    // [potential]
    let potential = match root_table.get("potential") {
        None => PotentialSpec::Constant(0.0),
        Some(Value::Table(t)) => {
            let sec = Section {
                name: "potential",
                table: t,
            };
            sec.check_keys(&["constant", "edge_constants", "samples"])?;
            if let Some(v) = sec.get("samples") {
                PotentialSpec::Samples(as_matrix("potential.samples", v)?)
            } else if let Some(v) = sec.get("edge_constants") {
                let row = as_matrix("potential.edge_constants", &Value::Array(vec![v.clone()]))?
                    .pop()
                    .unwrap();
                PotentialSpec::PerEdge(row)
            } else if let Some(cst) = sec.f64("constant")? {
                PotentialSpec::Constant(cst)
            } else {
                PotentialSpec::Constant(0.0)
            }
        }
        Some(v) => return Err(out_of_range("potential", v, "expected a table section")),
    };

    // [noise]
    let noise = section("noise")?;
    noise.check_keys(&["hurst", "normalization", "channels", "seed"])?;
    let hurst = noise
        .f64("hurst")?
        .ok_or_else(|| Error::InvalidConfig("missing key `noise.hurst`".into()))?;
    if !(0.5..1.0).contains(&hurst) {
        return Err(out_of_range("noise.hurst", hurst, "must lie in [0.5, 1)"));
    }
    let normalization = match noise.string("normalization")?.unwrap_or("standard") {
        "standard" => Normalization::Standard,
        "paper" => Normalization::PaperPrefactor,
        other => {
            return Err(out_of_range(
                "noise.normalization",
                other,
                "expected \"standard\" or \"paper\"",
            ))
        }
    };
    let channels = noise.usize_val("channels")?.unwrap_or(n);
    let seed = match noise.get("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(v) => return Err(out_of_range("noise.seed", v, "expected a nonnegative integer")),
    };

    // [discretization]
    let disc = section("discretization")?;
    disc.check_keys(&["n", "n_per_edge", "dt", "t_final", "t_max", "mc_samples"])?;
    let n_per_edge = if let Some(v) = disc.get("n_per_edge") {
        let row = as_matrix("discretization.n_per_edge", &Value::Array(vec![v.clone()]))?
            .pop()
            .unwrap();
        row.iter().map(|&x| x as usize).collect()
    } else {
        let n_sub = disc.usize_val("n")?.unwrap_or(DEFAULT_N);
        vec![n_sub; edges.len()]
    };
    if n_per_edge.iter().any(|&x| x < 2) {
        return Err(out_of_range(
            "discretization.n",
            format!("{n_per_edge:?}"),
            "each edge needs at least 2 subdivisions",
        ));
    }
    let dt = disc.f64("dt")?.unwrap_or(DEFAULT_DT);
    if dt <= 0.0 {
        return Err(out_of_range("discretization.dt", dt, "must be positive"));
    }
    let t_final = disc.f64("t_final")?.unwrap_or(1.0);
    if t_final <= 0.0 {
        return Err(out_of_range("discretization.t_final", t_final, "must be positive"));
    }
    let t_max = disc.f64("t_max")?.unwrap_or(50.0);
    if t_max <= 0.0 {
        return Err(out_of_range("discretization.t_max", t_max, "must be positive"));
    }
    let mc_samples = disc.usize_val("mc_samples")?.unwrap_or(DEFAULT_MC);

    // [study_params]
    let (alpha, yosida_n, formulation, quad_cells) = match root_table.get("study_params") {
        None => (0.2, vec![10.0, 100.0, 1000.0], Formulation::ActiveOnly, DEFAULT_CELLS),
        Some(Value::Table(t)) => {
            let sec = Section {
                name: "study_params",
                table: t,
            };
            sec.check_keys(&["alpha", "yosida_n", "formulation", "quad_cells"])?;
            let alpha = sec.f64("alpha")?.unwrap_or(0.2);
            if !(0.0..1.0).contains(&alpha) {
                return Err(out_of_range("study_params.alpha", alpha, "must lie in [0, 1)"));
            }
            let yosida_n = match sec.get("yosida_n") {
                Some(v) => as_matrix("study_params.yosida_n", &Value::Array(vec![v.clone()]))?
                    .pop()
                    .unwrap(),
                None => vec![10.0, 100.0, 1000.0],
            };
            let formulation = match sec.string("formulation")?.unwrap_or("active") {
                "active" => Formulation::ActiveOnly,
                "full" => Formulation::FullSystem,
                other => {
                    return Err(out_of_range(
                        "study_params.formulation",
                        other,
                        "expected \"active\" or \"full\"",
                    ))
                }
            };
            let quad_cells = sec.usize_val("quad_cells")?.unwrap_or(DEFAULT_CELLS).max(8);
            (alpha, yosida_n, formulation, quad_cells)
        }
        Some(v) => return Err(out_of_range("study_params", v, "expected a table section")),
    };

    Ok(ExperimentConfig {
        study,
        output_dir,
        edges,
        n0,
        b,
        b_imag,
        c,
        potential,
        hurst,
        normalization,
        channels,
        seed,
        n_per_edge,
        dt,
        t_final,
        t_max,
        mc_samples,
        alpha,
        yosida_n,
        formulation,
        quad_cells,
    })
}

impl ExperimentConfig {
    /// Canonical TOML echo of the resolved config; parsing it back is the
    /// identity on resolved configs.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write;
        writeln!(s, "study = \"{}\"", self.study.name()).unwrap();
        if let Some(dir) = &self.output_dir {
            writeln!(s, "output_dir = \"{dir}\"").unwrap();
        }
        writeln!(s, "\n[graph]").unwrap();
        let edges: Vec<String> = self
            .edges
            .iter()
            .map(|&(a, b)| format!("[{a}, {b}]"))
            .collect();
        writeln!(s, "edges = [{}]", edges.join(", ")).unwrap();
        writeln!(s, "n0 = {}", self.n0).unwrap();
        writeln!(s, "\n[coupling]").unwrap();
        writeln!(s, "b = {}", fmt_matrix(&self.b)).unwrap();
        if let Some(bi) = &self.b_imag {
            writeln!(s, "b_imag = {}", fmt_matrix(bi)).unwrap();
        }
        writeln!(s, "c = {}", fmt_matrix(&self.c)).unwrap();
        writeln!(s, "\n[potential]").unwrap();
        match &self.potential {
            PotentialSpec::Constant(v) => writeln!(s, "constant = {}", fmt_f(*v)).unwrap(),
            PotentialSpec::PerEdge(v) => writeln!(s, "edge_constants = {}", fmt_row(v)).unwrap(),
            PotentialSpec::Samples(m) => writeln!(s, "samples = {}", fmt_matrix(m)).unwrap(),
        }
        writeln!(s, "\n[noise]").unwrap();
        writeln!(s, "hurst = {}", fmt_f(self.hurst)).unwrap();
        writeln!(
            s,
            "normalization = \"{}\"",
            match self.normalization {
                Normalization::Standard => "standard",
                Normalization::PaperPrefactor => "paper",
            }
        )
        .unwrap();
        writeln!(s, "channels = {}", self.channels).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "\n[discretization]").unwrap();
        let ns: Vec<String> = self.n_per_edge.iter().map(|x| x.to_string()).collect();
        writeln!(s, "n_per_edge = [{}]", ns.join(", ")).unwrap();
        writeln!(s, "dt = {}", fmt_f(self.dt)).unwrap();
        writeln!(s, "t_final = {}", fmt_f(self.t_final)).unwrap();
        writeln!(s, "t_max = {}", fmt_f(self.t_max)).unwrap();
        writeln!(s, "mc_samples = {}", self.mc_samples).unwrap();
        writeln!(s, "\n[study_params]").unwrap();
        writeln!(s, "alpha = {}", fmt_f(self.alpha)).unwrap();
        let yn: Vec<String> = self.yosida_n.iter().map(|x| fmt_f(*x)).collect();
        writeln!(s, "yosida_n = [{}]", yn.join(", ")).unwrap();
        writeln!(
            s,
            "formulation = \"{}\"",
            match self.formulation {
                Formulation::ActiveOnly => "active",
                Formulation::FullSystem => "full",
            }
        )
        .unwrap();
        writeln!(s, "quad_cells = {}", self.quad_cells).unwrap();
        s
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        hex(&hasher.finalize())
    }

    pub fn vertex_count(&self) -> usize {
        self.edges.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0)
    }

    pub fn build_graph(&self) -> Result<NetworkGraph> {
        NetworkGraph::build(&self.edges, self.n0)
    }

    pub fn build_coupling(&self) -> Result<NodeCoupling> {
        let n = self.vertex_count();
        let to_arr = |m: &Vec<Vec<f64>>, name: &str| -> Result<ndarray::Array2<f64>> {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{n}x{n} {name}"),
                    got: format!("{}x{}", m.len(), m.first().map(|r| r.len()).unwrap_or(0)),
                });
            }
            Ok(ndarray::Array2::from_shape_fn((n, n), |(i, j)| m[i][j]))
        };
        let b_re = to_arr(&self.b, "coupling.b")?;
        let c = to_arr(&self.c, "coupling.c")?;
        let b = match &self.b_imag {
            Some(bi) => {
                let b_im = to_arr(bi, "coupling.b_imag")?;
                ndarray::Array2::from_shape_fn((n, n), |(i, j)| {
                    num_complex::Complex64::new(b_re[[i, j]], b_im[[i, j]])
                })
            }
            None => b_re.mapv(|x| num_complex::Complex64::new(x, 0.0)),
        };
        NodeCoupling::validate(b, c, self.n0)
    }

    pub fn build_mesh(&self, graph: &NetworkGraph) -> Result<Mesh> {
        Mesh::per_edge(graph, &self.n_per_edge)
    }

    pub fn build_potential(&self, mesh: &Mesh) -> Result<EdgePotential> {
        match &self.potential {
            PotentialSpec::Constant(v) => Ok(EdgePotential::constant(mesh, *v)),
            PotentialSpec::PerEdge(vals) => EdgePotential::per_edge_constant(mesh, vals),
            PotentialSpec::Samples(samples) => {
                EdgePotential::from_samples(mesh, samples.clone())
            }
        }
    }

    pub fn noise_spec(&self, seed_override: Option<u64>) -> Result<FbmSpec> {
        FbmSpec::new(
            self.hurst,
            self.channels,
            self.normalization,
            seed_override.unwrap_or(self.seed),
        )
    }

    /// The uniform solution grid `0, dt, .., t_final`.
    pub fn time_grid(&self) -> Vec<f64> {
        let steps = (self.t_final / self.dt).round().max(1.0) as usize;
        (0..=steps)
            .map(|i| self.t_final * i as f64 / steps as f64)
            .collect()
    }
}

fn fmt_f(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

fn fmt_row(row: &[f64]) -> String {
    let items: Vec<String> = row.iter().map(|&x| fmt_f(x)).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_matrix(m: &[Vec<f64>]) -> String {
    let rows: Vec<String> = m.iter().map(|r| fmt_row(r)).collect();
    format!("[{}]", rows.join(", "))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Validation entry point used by the CLI `validate` subcommand: parses the
/// config and instantiates every model object it references.
pub fn validate_config(text: &str) -> Result<ExperimentConfig> {
    let cfg = parse_config(text)?;
    let graph = cfg.build_graph()?;
    let coupling = cfg.build_coupling()?;
    if cfg.n_per_edge.len() != graph.m {
        return Err(Error::ShapeMismatch {
            expected: format!("{} per-edge subdivisions", graph.m),
            got: format!("{}", cfg.n_per_edge.len()),
        });
    }
    let mesh = cfg.build_mesh(&graph)?;
    cfg.build_potential(&mesh)?;
    if coupling.n() != graph.n {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0} coupling", graph.n),
            got: format!("{0}x{0}", coupling.n()),
        });
    }
    if cfg.channels != graph.n {
        return Err(out_of_range(
            "noise.channels",
            cfg.channels,
            "must equal the vertex count",
        ));
    }
    if cfg.study == Study::Regularity && cfg.alpha >= 0.25_f64.min(cfg.hurst) {
        return Err(Error::AlphaTooLarge {
            alpha: cfg.alpha,
            hurst: cfg.hurst,
        });
    }
    Ok(cfg)
}

/// A tiny helper for study manifests: deterministic key order.
pub type ManifestMap = BTreeMap<String, serde_json::Value>;

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
study = "stability"

[graph]
edges = [[1, 2]]
n0 = 2

[coupling]
c = [[1.0, 0.0], [0.0, 1.0]]

[noise]
hurst = 0.7
seed = 42

[discretization]
"#;

    #[test]
    fn minimal_roundtrip_is_identity() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.n_per_edge, vec![32]);
        assert_eq!(cfg.dt, 1e-2);
        assert_eq!(cfg.mc_samples, 2000);
        let echoed = cfg.to_toml();
        let reparsed = parse_config(&echoed).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(cfg.hash(), reparsed.hash());
    }

    #[test]
    fn out_of_range_hurst() {
        let text = MINIMAL.replace("hurst = 0.7", "hurst = 1.2");
        assert!(matches!(parse_config(&text), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn unknown_key_named() {
        let text = MINIMAL.replace("hurst = 0.7", "hurts = 0.7\nhurst = 0.7");
        match parse_config(&text) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "noise.hurts"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn missing_section_named() {
        let text = MINIMAL.replace("[graph]", "[graphs]");
        match parse_config(&text) {
            Err(e) => {
                let msg = e.to_string();
                assert!(
                    msg.contains("graph"),
                    "error should mention the missing section: {msg}"
                );
            }
            Ok(_) => panic!("expected failure"),
        }
    }

    #[test]
    fn validate_checks_model_objects() {
        let cfg = validate_config(MINIMAL).unwrap();
        assert_eq!(cfg.channels, 2);
        // A loop in the edges surfaces through validation.
        let text = MINIMAL.replace("edges = [[1, 2]]", "edges = [[1, 1]]");
        assert!(matches!(
            validate_config(&text),
            Err(Error::LoopNotSupported { .. })
        ));
    }

    #[test]
    fn defaults_are_echoed() {
        let cfg = parse_config(MINIMAL).unwrap();
        let echoed = cfg.to_toml();
        assert!(echoed.contains("dt = 0.01"));
        assert!(echoed.contains("mc_samples = 2000"));
        assert!(echoed.contains("normalization = \"standard\""));
    }
}
