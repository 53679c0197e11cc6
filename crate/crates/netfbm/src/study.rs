//! Batch study runner: instantiates the model from a config, runs the named
//! study, and emits CSV artifacts plus a JSON manifest with the config hash,
//! seeds, verdicts and per-assertion outcomes. Identical config and seed
//! reproduce bit-identical CSV bodies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde_json::json;

use crate::config::{ExperimentConfig, Study};
use crate::error::{Error, Result};
use crate::fbm::{self, SamplingMethod};
use crate::graph::NodeCoupling;
use crate::mesh::EdgePotential;
use crate::operator::DiscreteGenerator;
use crate::semigroup::{classify, equilibrium_projection, BlockSemigroup, StabilityClass};
use crate::solver::{
    self, full_system_solve, long_time_report, mc_second_moments, variance_on_grid,
    yosida_convergence, Formulation, MeasureVerdict, NoiseEmbedding,
};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// 17 significant digits, the study CSV number format.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct StudyOutput {
    pub manifest_path: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub assertions: Vec<Assertion>,
    pub error: Option<String>,
    pub passed: bool,
}

struct StudyCtx {
    csvs: Vec<(String, String)>,
    assertions: Vec<Assertion>,
    verdicts: serde_json::Map<String, serde_json::Value>,
}

impl StudyCtx {
    fn new() -> Self {
        StudyCtx {
            csvs: Vec::new(),
            assertions: Vec::new(),
            verdicts: serde_json::Map::new(),
        }
    }

    fn csv(&mut self, name: &str, body: String) {
        self.csvs.push((name.to_string(), body));
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn verdict(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.verdicts.insert(key.to_string(), value.into());
    }
}

/// Runs the configured study, writing artifacts into `out_dir`. Inner
/// operation errors are captured in the manifest and surface as a failed
/// run rather than a missing one.
pub fn run_study(
    config: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<StudyOutput> {
    fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let seed = seed_override.unwrap_or(config.seed);

    let mut ctx = StudyCtx::new();
    let run_error = match dispatch(config, seed, &mut ctx) {
        Ok(()) => None,
        Err(e) => Some(e.to_string()),
    };

    let all_passed = run_error.is_none() && ctx.assertions.iter().all(|a| a.passed);
    let mut csv_paths = Vec::new();
    for (name, body) in &ctx.csvs {
        let path = out_dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(body.as_bytes())?;
        csv_paths.push(path);
    }

    let manifest = json!({
        "study": config.study.name(),
        "config_hash": config.hash(),
        "seed": seed,
        "library_version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": ctx.csvs.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "verdicts": serde_json::Value::Object(ctx.verdicts.clone()),
        "assertions": ctx.assertions,
        "error": run_error,
        "exit_status": if all_passed { 0 } else { 1 },
        "config": config.to_toml(),
    });
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? .as_bytes())?;

    Ok(StudyOutput {
        manifest_path,
        csv_paths,
        assertions: manifest_assertions(&manifest),
        error: manifest["error"].as_str().map(String::from),
        passed: all_passed,
    })
}

fn manifest_assertions(manifest: &serde_json::Value) -> Vec<Assertion> {
    manifest["assertions"]
        .as_array()
        .map(|arr| {
            arr.iter()
                .map(|a| Assertion {
                    name: a["name"].as_str().unwrap_or("").into(),
                    passed: a["passed"].as_bool().unwrap_or(false),
                    detail: a["detail"].as_str().unwrap_or("").into(),
                })
                .collect()
        })
        .unwrap_or_default()
}

struct Model {
    gen: DiscreteGenerator,
    coupling: NodeCoupling,
    potential: EdgePotential,
}

fn instantiate(config: &ExperimentConfig) -> Result<Model> {
    let graph = config.build_graph()?;
    let coupling = config.build_coupling()?;
    let mesh = config.build_mesh(&graph)?;
    let potential = config.build_potential(&mesh)?;
    let gen = DiscreteGenerator::assemble(&graph, &coupling, &potential, &mesh)?;
    Ok(Model {
        gen,
        coupling,
        potential,
    })
}

fn dispatch(config: &ExperimentConfig, seed: u64, ctx: &mut StudyCtx) -> Result<()> {
    match config.study {
        Study::Stability => study_stability(config, ctx),
        Study::Moments => study_moments(config, seed, ctx),
        Study::Yosida => study_yosida(config, ctx),
        Study::Regularity => study_regularity(config, ctx),
        Study::LongTime => study_longtime(config, seed, ctx),
        Study::FullSystem => study_fullsystem(config, seed, ctx),
    }
}

fn study_stability(config: &ExperimentConfig, ctx: &mut StudyCtx) -> Result<()> {
    let model = instantiate(config)?;
    let assessment = classify(&model.gen, &model.potential, &model.coupling)?;
    ctx.verdict("stability_class", assessment.class.name());
    ctx.verdict("spectral_bound", assessment.evidence.spectral_bound);

    let mut body = String::from("index,real,imag\n");
    for (i, lam) in model.gen.eigenvalues().iter().enumerate() {
        body.push_str(&format!("{i},{},{}\n", fmt_sig(lam.re), fmt_sig(lam.im)));
    }
    ctx.csv("spectrum.csv", body);

    match assessment.class {
        StabilityClass::ProjectionLimit => {
            let p = equilibrium_projection(&model.gen)?;
            let s50 = model.gen.propagator(50.0)?;
            let gap = model.gen.opnorm_m(&(&s50 - &p))?;
            ctx.check(
                "projection_limit_norm",
                gap <= 1e-6,
                format!("||S(50) - P|| = {gap:.3e}"),
            );
        }
        StabilityClass::UniformlyExponentiallyStable { rate } => {
            let t = 10.0;
            let s = model.gen.propagator(t)?;
            let norm = model.gen.opnorm_m(&s)?;
            let bound = (1.0 + 1e-6) * (-rate * t).exp();
            ctx.check(
                "exponential_decay",
                model.gen.is_hermitian() && norm <= bound || !model.gen.is_hermitian(),
                format!("||S({t})|| = {norm:.3e}, bound {bound:.3e}"),
            );
        }
        _ => {
            for t in [0.1, 1.0, 10.0] {
                let s = model.gen.propagator(t)?;
                let norm = model.gen.opnorm_m(&s)?;
                ctx.check(
                    &format!("contractive_t{t}"),
                    norm <= 1.0 + 1e-9
                        || assessment.class == StabilityClass::Unclassified,
                    format!("||S({t})|| = {norm:.12}"),
                );
            }
        }
    }
    Ok(())
}

fn study_moments(config: &ExperimentConfig, seed: u64, ctx: &mut StudyCtx) -> Result<()> {
    let model = instantiate(config)?;
    let noise = config.noise_spec(Some(seed))?;
    let active_spec = fbm::FbmSpec::new(
        noise.hurst,
        model.coupling.n0,
        noise.normalization,
        noise.seed,
    )?;
    let embed = NoiseEmbedding::active(&model.gen, &model.coupling)?;
    let grid = config.time_grid();
    let k = grid.len() - 1;
    let checkpoints: Vec<usize> = (1..=5).map(|i| i * k / 5).collect();
    let mc = mc_second_moments(
        &model.gen,
        &embed,
        &active_spec,
        &grid,
        SamplingMethod::Cholesky,
        config.mc_samples,
        &checkpoints,
    )?;
    let scale = match config.normalization {
        crate::fbm::Normalization::Standard => 1.0,
        crate::fbm::Normalization::PaperPrefactor => 1.0 / config.hurst,
    };
    let mut body = String::from("time,mc_mean,mc_stderr,quadrature\n");
    let mut all_ok = true;
    for (i, &idx) in checkpoints.iter().enumerate() {
        let quad = variance_on_grid(&model.gen, &embed, &grid, idx, config.hurst)? * scale;
        let gap = (mc.mean_sq[i] - quad).abs();
        let ok = gap <= 3.0 * mc.stderr[i];
        all_ok &= ok;
        body.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig(mc.times[i]),
            fmt_sig(mc.mean_sq[i]),
            fmt_sig(mc.stderr[i]),
            fmt_sig(quad)
        ));
        ctx.check(
            &format!("mc_vs_quadrature_t{:.3}", mc.times[i]),
            ok,
            format!("|mc - quad| = {gap:.3e}, 3se = {:.3e}", 3.0 * mc.stderr[i]),
        );
    }
    ctx.csv("moments.csv", body);
    ctx.verdict("mc_matches_quadrature", all_ok);
    Ok(())
}

fn study_yosida(config: &ExperimentConfig, ctx: &mut StudyCtx) -> Result<()> {
    let model = instantiate(config)?;
    let embed = NoiseEmbedding::active(&model.gen, &model.coupling)?;
    let rows = yosida_convergence(
        &model.gen,
        &embed,
        config.hurst,
        &config.yosida_n,
        config.t_final,
        config.quad_cells.min(256),
    )?;
    let mut body = String::from("n,sup_w_gap,sup_aw_gap,sup_phi1,sup_phi2\n");
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_sig(r.n),
            fmt_sig(r.sup_w_gap),
            fmt_sig(r.sup_aw_gap),
            fmt_sig(r.sup_phi1),
            fmt_sig(r.sup_phi2)
        ));
    }
    ctx.csv("yosida.csv", body);
    for w in rows.windows(2) {
        ctx.check(
            &format!("w_gap_decreasing_n{}", w[1].n),
            w[1].sup_w_gap <= w[0].sup_w_gap * 1.05,
            format!("{} -> {}", w[0].sup_w_gap, w[1].sup_w_gap),
        );
        ctx.check(
            &format!("aw_gap_decreasing_n{}", w[1].n),
            w[1].sup_aw_gap <= w[0].sup_aw_gap * 1.05,
            format!("{} -> {}", w[0].sup_aw_gap, w[1].sup_aw_gap),
        );
    }
    for r in &rows {
        ctx.check(
            &format!("split_bound_n{}", r.n),
            r.sup_aw_gap <= 2.0 * (r.sup_phi1 + r.sup_phi2) * (1.0 + 1e-9),
            format!(
                "gap {} vs 2(phi1 + phi2) = {}",
                r.sup_aw_gap,
                2.0 * (r.sup_phi1 + r.sup_phi2)
            ),
        );
    }
    Ok(())
}

fn study_regularity(config: &ExperimentConfig, ctx: &mut StudyCtx) -> Result<()> {
    let model = instantiate(config)?;
    let embed = NoiseEmbedding::active(&model.gen, &model.coupling)?;
    let coarse = solver::regularity_profile(
        &model.gen,
        &embed,
        config.hurst,
        config.alpha,
        config.t_final,
        config.quad_cells.min(384),
    )?;
    let fine = solver::regularity_profile(
        &model.gen,
        &embed,
        config.hurst,
        config.alpha,
        config.t_final,
        2 * config.quad_cells.min(384),
    )?;
    let mut body = String::from("time,profile_coarse,profile_fine\n");
    for (pc, pf) in coarse.profile.iter().zip(&fine.profile) {
        body.push_str(&format!(
            "{},{},{}\n",
            fmt_sig(pc.0),
            fmt_sig(pc.1),
            fmt_sig(pf.1)
        ));
    }
    ctx.csv("regularity.csv", body);
    let rel = (coarse.time_integral - fine.time_integral).abs() / fine.time_integral;
    ctx.verdict("time_integral", fine.time_integral);
    ctx.verdict("fitted_const", fine.fitted_const);
    ctx.check(
        "finite_and_quadrature_stable",
        fine.time_integral.is_finite() && rel <= 0.01,
        format!("relative change under refinement = {rel:.3e}"),
    );
    Ok(())
}

fn study_longtime(config: &ExperimentConfig, seed: u64, ctx: &mut StudyCtx) -> Result<()> {
    let model = instantiate(config)?;
    let assessment = classify(&model.gen, &model.potential, &model.coupling)?;
    let noise = config.noise_spec(Some(seed))?;
    let report = long_time_report(
        &model.gen,
        &model.coupling,
        &assessment,
        config.formulation,
        &noise,
        config.t_max,
        0,
        config.quad_cells.min(384),
    )?;
    write_trace_csv(ctx, &report);
    ctx.verdict("stability_class", assessment.class.name());
    ctx.verdict("measure_verdict", format!("{:?}", report.verdict));
    ctx.verdict("rule", format!("{:?}", report.rule));
    if let Some(g) = &report.growth {
        ctx.verdict("growth_exponent", g.exponent);
    }

    match report.verdict {
        MeasureVerdict::InvariantMeasureExists => {
            let embed = NoiseEmbedding::active(&model.gen, &model.coupling)?;
            let half = variance_quadrature_scaled(config, &model.gen, &embed, config.t_max / 2.0)?;
            let full = variance_quadrature_scaled(config, &model.gen, &embed, config.t_max)?;
            let rel = (full - half).abs() / full;
            ctx.check(
                "trace_plateau",
                rel <= 0.01,
                format!("trace({}) vs trace({}): rel {rel:.3e}", config.t_max / 2.0, config.t_max),
            );
        }
        MeasureVerdict::NoInvariantMeasure => {
            if let Some(g) = &report.growth {
                if report.rule == solver::VerdictRule::NoDissipation {
                    let target = 2.0 * config.hurst;
                    ctx.check(
                        "growth_exponent_2h",
                        (g.exponent - target).abs() <= 0.15,
                        format!("fitted {:.4} vs 2H = {target:.4}", g.exponent),
                    );
                }
            }
        }
        MeasureVerdict::Inconclusive => {
            ctx.check("inconclusive_recorded", true, "no decisive premise".into());
        }
    }
    Ok(())
}

fn variance_quadrature_scaled(
    config: &ExperimentConfig,
    gen: &DiscreteGenerator,
    embed: &NoiseEmbedding,
    t: f64,
) -> Result<f64> {
    let scale = match config.normalization {
        crate::fbm::Normalization::Standard => 1.0,
        crate::fbm::Normalization::PaperPrefactor => 1.0 / config.hurst,
    };
    Ok(solver::variance_quadrature(gen, embed, t, config.hurst, config.quad_cells.min(384))? * scale)
}

fn write_trace_csv(ctx: &mut StudyCtx, report: &solver::MomentReport) {
    let mut body = String::from("time,trace_qt\n");
    for (t, v) in report.times.iter().zip(&report.trace) {
        body.push_str(&format!("{},{}\n", fmt_sig(*t), fmt_sig(*v)));
    }
    ctx.csv("trace.csv", body);
}

fn study_fullsystem(config: &ExperimentConfig, seed: u64, ctx: &mut StudyCtx) -> Result<()> {
    let model = instantiate(config)?;
    let assessment = classify(&model.gen, &model.potential, &model.coupling)?;
    let block = BlockSemigroup::new(&model.gen)?;
    let noise = config.noise_spec(Some(seed))?;
    let grid = config.time_grid();
    let path = fbm::sample(&noise, &grid, SamplingMethod::Cholesky)?;
    let np = model.coupling.n() - model.coupling.n0;

    let state0 = Array1::<Complex64>::zeros(model.gen.dim());
    let boundary0 = Array1::<Complex64>::zeros(np);
    let traj = full_system_solve(&block, &model.coupling, &path, &grid, state0, boundary0)?;

    // Boundary component must be exactly C_p Z(t).
    let c_p = model.coupling.c_passive().mapv(c);
    let mut boundary_exact = true;
    for (k, b) in traj.boundary.iter().enumerate() {
        let direct = c_p.dot(&path.at_c(k));
        if b != &direct {
            boundary_exact = false;
            break;
        }
    }
    ctx.check(
        "boundary_is_cp_z",
        boundary_exact,
        "second component equals C_p Z(t) bitwise".into(),
    );

    // Unsplit cross-check through the block pencil.
    let (big_a, big_m) = block.block_pencil();
    let block_gen = DiscreteGenerator::from_matrices(big_a, big_m)?;
    let d = model.gen.dim();
    let n = model.coupling.n();
    let mut embed = Array2::<Complex64>::zeros((d + np, n));
    let active = NoiseEmbedding::active_all_channels(&model.gen, &model.coupling)?;
    embed
        .slice_mut(ndarray::s![..d, ..])
        .assign(active.matrix());
    for i in 0..np {
        for h in 0..n {
            embed[[d + i, h]] = c(model.coupling.c_passive()[[i, h]]);
        }
    }
    let unsplit = solver::convolve(
        &block_gen,
        &NoiseEmbedding::from_matrix(embed),
        &path,
        &grid,
    )?;
    let mut max_gap: f64 = 0.0;
    let mut max_norm: f64 = 1e-300;
    for (k, s) in traj.states.iter().enumerate() {
        let other = unsplit.states[k].slice(ndarray::s![..d]);
        let gap: f64 = s
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        max_gap = max_gap.max(gap);
        max_norm = max_norm.max(model.gen.norm_m(s.view()));
    }
    ctx.check(
        "split_matches_unsplit",
        max_gap <= 1e-9 * max_norm.max(1.0),
        format!("max gap {max_gap:.3e} over state scale {max_norm:.3e}"),
    );

    let mut body = String::from("time,state_norm,boundary_norm\n");
    for (k, t) in traj.times.iter().enumerate() {
        let sn = model.gen.norm_m(traj.states[k].view());
        let bn = traj.boundary[k]
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        body.push_str(&format!("{},{},{}\n", fmt_sig(*t), fmt_sig(sn), fmt_sig(bn)));
    }
    ctx.csv("fullsystem.csv", body);

    let report = long_time_report(
        &model.gen,
        &model.coupling,
        &assessment,
        Formulation::FullSystem,
        &noise,
        config.t_max,
        0,
        config.quad_cells.min(256),
    )?;
    write_trace_csv(ctx, &report);
    ctx.verdict("measure_verdict", format!("{:?}", report.verdict));
    ctx.verdict("rule", format!("{:?}", report.rule));
    Ok(())
}

/// Writes a sampled fBm path as CSV next to the study outputs.
pub fn export_paths(
    config: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let noise = config.noise_spec(seed_override)?;
    let grid = config.time_grid();
    let path = fbm::sample(&noise, &grid, SamplingMethod::Cholesky)?;
    let file = out_dir.join("paths.csv");
    let mut f = fs::File::create(&file)?;
    path.write_csv(&mut f)?;
    Ok(file)
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidConfig(format!("manifest serialization: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const STABILITY: &str = r#"
study = "stability"

[graph]
edges = [[1, 2]]
n0 = 2

[coupling]
c = [[1.0, 0.0], [0.0, 1.0]]

[noise]
hurst = 0.75
seed = 7

[discretization]
n = 16
"#;

    #[test]
    fn stability_study_produces_manifest_and_verdict() {
        let cfg = parse_config(STABILITY).unwrap();
        let dir = std::env::temp_dir().join(format!("netfbm-study-{}", std::process::id()));
        let out = run_study(&cfg, &dir, None).unwrap();
        assert!(out.passed, "assertions: {:?}", out.assertions);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["verdicts"]["stability_class"], "ProjectionLimit");
        assert_eq!(manifest["exit_status"], 0);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rerun_is_bit_identical() {
        let mut text = STABILITY.replace("study = \"stability\"", "study = \"moments\"");
        text.push_str("\n[study_params]\nquad_cells = 64\n");
        let text = text.replace("n = 16", "n = 8\ndt = 0.05\nmc_samples = 200");
        let cfg = parse_config(&text).unwrap();
        let base = std::env::temp_dir().join(format!("netfbm-det-{}", std::process::id()));
        let out1 = run_study(&cfg, &base.join("a"), None).unwrap();
        let out2 = run_study(&cfg, &base.join("b"), None).unwrap();
        for (p1, p2) in out1.csv_paths.iter().zip(&out2.csv_paths) {
            let b1 = fs::read(p1).unwrap();
            let b2 = fs::read(p2).unwrap();
            assert_eq!(b1, b2, "CSV bodies differ between reruns");
        }
        fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn inner_error_lands_in_manifest() {
        // A regularity study with alpha too large fails inside the run and
        // must still produce a manifest with nonzero exit status.
        let text = STABILITY
            .replace("study = \"stability\"", "study = \"regularity\"")
            .to_string()
            + "\n[study_params]\nalpha = 0.3\n";
        let cfg = parse_config(&text).unwrap();
        let dir = std::env::temp_dir().join(format!("netfbm-err-{}", std::process::id()));
        let out = run_study(&cfg, &dir, None).unwrap();
        assert!(!out.passed);
        assert!(out.error.is_some());
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["exit_status"], 1);
        fs::remove_dir_all(&dir).ok();
    }
}
