//! Manufactured solutions, experiment specifications and study drivers.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use crate::analysis::{
    compute_norms, condition_number, divergence_report, solve, AnalysisError, ConditionMode, DivergenceReport,
    ErrorRules, NormReport,
};
use crate::assembly::{
    assemble_system, AssemblyError, Discretization, ExactSolution, FormulationConfig, ProblemData, Stabilization,
};
use crate::geometry::{BcMode, CellClass, Domain, DomainKind, Point, Rect};

// ---------------------------------------------------------------------------
// manufactured solutions

/// `u = (y sin x cos y, -x sin y cos x)`, `p = x³y`.
#[derive(Debug, Clone, Copy)]
pub struct PentagonSolution;

impl ExactSolution for PentagonSolution {
    fn velocity(&self, [x, y]: Point) -> [f64; 2] {
        [y * x.sin() * y.cos(), -x * y.sin() * x.cos()]
    }
    fn pressure(&self, [x, y]: Point) -> f64 {
        x * x * x * y
    }
    fn pressure_gradient(&self, [x, y]: Point) -> [f64; 2] {
        [3.0 * x * x * y, x * x * x]
    }
    fn divergence(&self, [x, y]: Point) -> f64 {
        y * x.cos() * y.cos() - x * y.cos() * x.cos()
    }
}

/// `p = sin(2πx) cos(2πy)` with `u = ∇p`, so `f = 0`.
#[derive(Debug, Clone, Copy)]
pub struct CircleSolution;

impl ExactSolution for CircleSolution {
    fn velocity(&self, x: Point) -> [f64; 2] {
        self.pressure_gradient(x)
    }
    fn pressure(&self, [x, y]: Point) -> f64 {
        let t = 2.0 * std::f64::consts::PI;
        (t * x).sin() * (t * y).cos()
    }
    fn pressure_gradient(&self, [x, y]: Point) -> [f64; 2] {
        let t = 2.0 * std::f64::consts::PI;
        [t * (t * x).cos() * (t * y).cos(), -t * (t * x).sin() * (t * y).sin()]
    }
    fn divergence(&self, x: Point) -> f64 {
        let t = 2.0 * std::f64::consts::PI;
        -2.0 * t * t * self.pressure(x)
    }
}

/// `u = (cos x sinh y, sin x cosh y)`, divergence free, with
/// `p = -sin x sinh y - (cos 1 - 1)(cosh 1 - 1)`.
#[derive(Debug, Clone, Copy)]
pub struct PlateSolution;

impl ExactSolution for PlateSolution {
    fn velocity(&self, [x, y]: Point) -> [f64; 2] {
        [x.cos() * y.sinh(), x.sin() * y.cosh()]
    }
    fn pressure(&self, [x, y]: Point) -> f64 {
        -x.sin() * y.sinh() - (1f64.cos() - 1.0) * (1f64.cosh() - 1.0)
    }
    fn pressure_gradient(&self, [x, y]: Point) -> [f64; 2] {
        [-x.cos() * y.sinh(), -x.sin() * y.cosh()]
    }
    fn divergence(&self, _: Point) -> f64 {
        0.0
    }
}

/// Global polynomials inside `RT_k × Q_k`:
/// `u = (x^{k+1} y^k + 1 + x, x^k y^{k+1} - 2y + 1/2)`, `p = x^k y^k + x^k - 0.3 y^k`.
#[derive(Debug, Clone, Copy)]
pub struct PolynomialSolution {
    pub k: usize,
}

fn pw(x: f64, n: usize) -> f64 {
    x.powi(n as i32)
}

fn dpw(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * x.powi(n as i32 - 1)
    }
}

impl ExactSolution for PolynomialSolution {
    fn velocity(&self, [x, y]: Point) -> [f64; 2] {
        let k = self.k;
        [pw(x, k + 1) * pw(y, k) + 1.0 + x, pw(x, k) * pw(y, k + 1) - 2.0 * y + 0.5]
    }
    fn pressure(&self, [x, y]: Point) -> f64 {
        let k = self.k;
        pw(x, k) * pw(y, k) + pw(x, k) - 0.3 * pw(y, k)
    }
    fn pressure_gradient(&self, [x, y]: Point) -> [f64; 2] {
        let k = self.k;
        [
            dpw(x, k) * pw(y, k) + dpw(x, k),
            pw(x, k) * dpw(y, k) - 0.3 * dpw(y, k),
        ]
    }
    fn divergence(&self, [x, y]: Point) -> f64 {
        let k = self.k;
        dpw(x, k + 1) * pw(y, k) + 1.0 + pw(x, k) * dpw(y, k + 1) - 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolutionId {
    Pentagon,
    Circle,
    Plate,
    /// [`PolynomialSolution`] of the degree of the run.
    Polynomial,
}

impl SolutionId {
    pub fn build(self, k: usize) -> Arc<dyn ExactSolution> {
        match self {
            SolutionId::Pentagon => Arc::new(PentagonSolution),
            SolutionId::Circle => Arc::new(CircleSolution),
            SolutionId::Plate => Arc::new(PlateSolution),
            SolutionId::Polynomial => Arc::new(PolynomialSolution { k }),
        }
    }
}

// ---------------------------------------------------------------------------
// specifications

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Convergence,
    Conditioning,
    Divergence,
    EpsilonSweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub domain: DomainKind,
    pub bc: BcMode,
    pub degrees: Vec<usize>,
    pub refinements: Vec<usize>,
    /// `ε` values of an epsilon sweep.
    pub epsilons: Vec<f64>,
    pub stabilization: Stabilization,
    pub symmetric: bool,
    pub nitsche_scale: f64,
    pub strong_fitted_neumann: bool,
    /// Also run without stabilization.
    pub compare_unstabilized: bool,
    pub solution: SolutionId,
    pub output: Option<PathBuf>,
    pub dump_matrix: bool,
    pub dump_classification: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpecError {
    UnknownExperiment(String),
    EmptyList(&'static str),
    NotIncreasing,
    UnsupportedDegree(usize),
    InvalidEpsilon(f64),
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecError::UnknownExperiment(n) => write!(f, "unknown experiment `{n}`"),
            SpecError::EmptyList(what) => write!(f, "the {what} list is empty"),
            SpecError::NotIncreasing => write!(f, "refinements must be strictly increasing"),
            SpecError::UnsupportedDegree(k) => write!(f, "degree {k} is not in 0..=3"),
            SpecError::InvalidEpsilon(e) => write!(f, "epsilon {e} must lie in (0, 0.25)"),
        }
    }
}

impl std::error::Error for SpecError {}

impl ExperimentSpec {
    fn base(name: &str, kind: ExperimentKind, domain: DomainKind, bc: BcMode, solution: SolutionId) -> Self {
        Self {
            name: name.to_string(),
            kind,
            domain,
            bc,
            degrees: vec![0, 1, 2],
            refinements: vec![8, 16, 32, 64],
            epsilons: Vec::new(),
            stabilization: Stabilization::ProjectionGhostPenalty,
            symmetric: true,
            nitsche_scale: 1.0,
            strong_fitted_neumann: false,
            compare_unstabilized: false,
            solution,
            output: None,
            dump_matrix: false,
            dump_classification: false,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.degrees.is_empty() {
            return Err(SpecError::EmptyList("degree"));
        }
        if self.refinements.is_empty() {
            return Err(SpecError::EmptyList("refinement"));
        }
        if self.refinements.windows(2).any(|w| w[0] >= w[1]) || self.refinements[0] == 0 {
            return Err(SpecError::NotIncreasing);
        }
        if let Some(&k) = self.degrees.iter().find(|&&k| k > 3) {
            return Err(SpecError::UnsupportedDegree(k));
        }
        if self.kind == ExperimentKind::EpsilonSweep && self.epsilons.is_empty() {
            return Err(SpecError::EmptyList("epsilon"));
        }
        let eps = self.epsilons.iter().copied().chain(match self.domain {
            DomainKind::CutRectangle { eps } | DomainKind::CutPentagon { eps } => Some(eps),
            _ => None,
        });
        for e in eps {
            if !(e > 0.0 && e < 0.25) {
                return Err(SpecError::InvalidEpsilon(e));
            }
        }
        Ok(())
    }

    /// Replaces `ε` of cut rectangle and cut pentagon domains.
    pub fn set_epsilon(&mut self, eps: f64) {
        match &mut self.domain {
            DomainKind::CutRectangle { eps: e } | DomainKind::CutPentagon { eps: e } => *e = eps,
            _ => {}
        }
        if self.kind == ExperimentKind::EpsilonSweep {
            self.epsilons = vec![eps];
        }
    }

    pub fn config(&self, k: usize, stabilization: Stabilization) -> FormulationConfig {
        FormulationConfig {
            bc_mode: self.bc,
            stabilization,
            symmetric: self.symmetric,
            nitsche_scale: self.nitsche_scale,
            degree: k,
            strong_fitted_neumann: self.strong_fitted_neumann,
        }
    }

    fn stabilizations(&self) -> Vec<Stabilization> {
        let mut out = vec![self.stabilization];
        if self.compare_unstabilized && self.stabilization != Stabilization::None {
            out.push(Stabilization::None);
        }
        out
    }
}

pub fn build_domain(kind: DomainKind, bc: BcMode) -> Domain {
    let d = match kind {
        DomainKind::FullBox => Domain::full_box(Rect::unit()),
        DomainKind::CutRectangle { eps } => Domain::cut_rectangle(eps),
        DomainKind::CutPentagon { eps } => Domain::cut_pentagon(eps),
        DomainKind::CutCircle { center, radius } => Domain::cut_circle(center, radius),
        DomainKind::SquareWithCircularCut { center, radius } => Domain::square_with_circular_cut(center, radius),
    };
    d.with_bc(bc)
}

pub const EPSILON_LADDER: [f64; 6] = [1e-3, 1e-5, 1e-7, 1e-9, 1e-11, 1e-13];

/// Names of the shipped experiments.
pub fn registry_names() -> Vec<&'static str> {
    vec![
        "pentagon-convergence",
        "circle-convergence",
        "rectangle-conditioning-neumann",
        "rectangle-conditioning-dirichlet",
        "plate-divergence",
        "rectangle-epsilon-sweep",
        "fullbox-exactness",
    ]
}

pub fn registry(name: &str) -> Result<ExperimentSpec, SpecError> {
    use ExperimentKind::*;
    let spec = match name {
        "pentagon-convergence" => {
            let mut s = ExperimentSpec::base(
                name,
                Convergence,
                DomainKind::CutPentagon { eps: 1e-9 },
                BcMode::PureNeumann,
                SolutionId::Pentagon,
            );
            s.strong_fitted_neumann = true;
            s
        }
        "circle-convergence" => {
            let mut s = ExperimentSpec::base(
                name,
                Convergence,
                DomainKind::CutCircle {
                    center: [0.5, 0.5],
                    radius: 0.45,
                },
                BcMode::PureNeumann,
                SolutionId::Circle,
            );
            s.compare_unstabilized = true;
            s
        }
        "rectangle-conditioning-neumann" | "rectangle-conditioning-dirichlet" => {
            let bc = if name.ends_with("neumann") {
                BcMode::PureNeumann
            } else {
                BcMode::PureDirichlet
            };
            let mut s = ExperimentSpec::base(
                name,
                Conditioning,
                DomainKind::CutRectangle { eps: 1e-7 },
                bc,
                SolutionId::Pentagon,
            );
            s.degrees = vec![0, 1, 2, 3];
            s.refinements = vec![8, 16, 32];
            s.compare_unstabilized = true;
            s
        }
        "plate-divergence" => {
            let mut s = ExperimentSpec::base(
                name,
                Divergence,
                DomainKind::SquareWithCircularCut {
                    center: [0.0, 0.0],
                    radius: 0.52,
                },
                BcMode::MixedNeumannDirichlet,
                SolutionId::Plate,
            );
            s.degrees = vec![1];
            s.refinements = vec![16];
            s.symmetric = false;
            s.compare_unstabilized = true;
            s
        }
        "rectangle-epsilon-sweep" => {
            let mut s = ExperimentSpec::base(
                name,
                EpsilonSweep,
                DomainKind::CutRectangle { eps: 1e-3 },
                BcMode::PureNeumann,
                SolutionId::Pentagon,
            );
            s.degrees = vec![1];
            s.refinements = vec![16];
            s.epsilons = EPSILON_LADDER.to_vec();
            s.compare_unstabilized = true;
            s
        }
        "fullbox-exactness" => {
            let mut s = ExperimentSpec::base(
                name,
                Convergence,
                DomainKind::FullBox,
                BcMode::MixedNeumannDirichlet,
                SolutionId::Polynomial,
            );
            s.refinements = vec![4, 8];
            s
        }
        _ => return Err(SpecError::UnknownExperiment(name.to_string())),
    };
    Ok(spec)
}

// ---------------------------------------------------------------------------
// runs

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Solves one configuration and measures the errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub norms: NormReport,
    pub residual: f64,
    pub flagged: bool,
}

pub fn run_single(
    disc: &Discretization,
    config: &FormulationConfig,
    exact: Arc<dyn ExactSolution>,
) -> Result<RunOutcome, ExperimentError> {
    let data = ProblemData::from_exact(exact.clone());
    let system = assemble_system(disc, config, &data)?;
    let sol = solve(&system)?;
    let rules = ErrorRules::new(disc)?;
    let norms = compute_norms(disc, &rules, &sol, exact.as_ref());
    Ok(RunOutcome {
        norms,
        residual: sol.residual,
        flagged: sol.flagged,
    })
}

fn stab_name(s: Stabilization) -> &'static str {
    match s {
        Stabilization::None => "none",
        Stabilization::JumpGhostPenalty => "jump",
        Stabilization::ProjectionGhostPenalty => "projection",
    }
}

/// Floats with 17 significant digits; non-finite values as `NaN`, `inf`, `-inf`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Tabular result of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl StudyReport {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub k: usize,
    pub nx: usize,
    pub h: f64,
    pub stabilization: Stabilization,
    pub outcome: Result<RunOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub records: Vec<ConvergenceRecord>,
}

/// `log(e_coarse / e_fine) / log(h_coarse / h_fine)`.
pub fn eoc(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln()
}

impl ConvergenceStudy {
    pub fn series(&self, k: usize, stabilization: Stabilization) -> Vec<&ConvergenceRecord> {
        let mut v: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.k == k && r.stabilization == stabilization)
            .collect();
        v.sort_by_key(|r| r.nx);
        v
    }

    /// EOC of the selected error between the two finest refinements.
    pub fn finest_eoc(&self, k: usize, stabilization: Stabilization, pick: fn(&NormReport) -> f64) -> f64 {
        let s = self.series(k, stabilization);
        if s.len() < 2 {
            return f64::NAN;
        }
        let (a, b) = (s[s.len() - 2], s[s.len() - 1]);
        match (&a.outcome, &b.outcome) {
            (Ok(x), Ok(y)) => eoc(pick(&x.norms), pick(&y.norms), a.h, b.h),
            _ => f64::NAN,
        }
    }

    pub fn report(&self, name: &str) -> StudyReport {
        let mut rep = StudyReport::new(
            name,
            &[
                "k",
                "nx",
                "h",
                "stab",
                "vel_l2",
                "pres_l2",
                "pres_h1_broken",
                "vel_energy",
                "pres_energy",
                "triple",
                "div_l2",
                "div_linf",
                "eoc_vel_l2",
                "eoc_pres_l2",
                "residual",
                "status",
            ],
        );
        let mut keys: Vec<(usize, &'static str)> =
            self.records.iter().map(|r| (r.k, stab_name(r.stabilization))).collect();
        keys.sort();
        keys.dedup();
        for (k, sname) in keys {
            let series: Vec<_> = {
                let mut v: Vec<_> = self
                    .records
                    .iter()
                    .filter(|r| r.k == k && stab_name(r.stabilization) == sname)
                    .collect();
                v.sort_by_key(|r| r.nx);
                v
            };
            let mut prev: Option<(&ConvergenceRecord, &RunOutcome)> = None;
            for r in series {
                let mut row = vec![r.k.to_string(), r.nx.to_string(), fmt_float(r.h), sname.to_string()];
                match &r.outcome {
                    Ok(o) => {
                        let n = &o.norms;
                        for v in [
                            n.vel_l2,
                            n.pres_l2,
                            n.pres_h1_broken,
                            n.vel_energy,
                            n.pres_energy,
                            n.triple,
                            n.div_l2,
                            n.div_linf,
                        ] {
                            row.push(fmt_float(v));
                        }
                        let (ev, ep) = match prev {
                            Some((pr, po)) => (
                                eoc(po.norms.vel_l2, n.vel_l2, pr.h, r.h),
                                eoc(po.norms.pres_l2, n.pres_l2, pr.h, r.h),
                            ),
                            None => (f64::NAN, f64::NAN),
                        };
                        row.push(fmt_float(ev));
                        row.push(fmt_float(ep));
                        row.push(fmt_float(o.residual));
                        row.push(if o.flagged { "flagged" } else { "ok" }.to_string());
                        prev = Some((r, o));
                    }
                    Err(e) => {
                        row.extend(std::iter::repeat_n("NaN".to_string(), 11));
                        row.push(format!("failed: {e}"));
                        prev = None;
                    }
                }
                rep.rows.push(row);
            }
        }
        rep
    }

    /// A stabilized run failed or was flagged.
    pub fn has_stabilized_failure(&self) -> bool {
        self.records.iter().any(|r| {
            r.stabilization != Stabilization::None && r.outcome.as_ref().map(|o| o.flagged).unwrap_or(true)
        })
    }
}

fn dump_artifacts(
    spec: &ExperimentSpec,
    disc: &Discretization,
    config: &FormulationConfig,
    tag: &str,
) -> Result<(), ExperimentError> {
    let Some(dir) = &spec.output else {
        return Ok(());
    };
    if spec.dump_classification {
        let f = std::fs::File::create(dir.join(format!("{}_{tag}_classification.csv", spec.name)))?;
        crate::mesh::write_classification_csv(f, &disc.mesh, &disc.cls, &disc.patches)?;
    }
    if spec.dump_matrix {
        let data = ProblemData::from_exact(spec.solution.build(config.degree));
        let system = assemble_system(disc, config, &data)?;
        let f = std::fs::File::create(dir.join(format!(
            "{}_{tag}_{}.mtx",
            spec.name,
            stab_name(config.stabilization)
        )))?;
        system.write_coordinate(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

pub fn run_convergence(spec: &ExperimentSpec) -> Result<ConvergenceStudy, ExperimentError> {
    spec.validate()?;
    let domain = build_domain(spec.domain, spec.bc);
    let mut records = Vec::new();
    for &k in &spec.degrees {
        let exact = spec.solution.build(k);
        for &nx in &spec.refinements {
            let disc = Discretization::new(&domain, nx, k)?;
            for stab in spec.stabilizations() {
                let config = spec.config(k, stab);
                dump_artifacts(spec, &disc, &config, &format!("k{k}_nx{nx}"))?;
                let outcome = run_single(&disc, &config, exact.clone()).map_err(|e| e.to_string());
                records.push(ConvergenceRecord {
                    k,
                    nx,
                    h: disc.h(),
                    stabilization: stab,
                    outcome,
                });
            }
        }
    }
    Ok(ConvergenceStudy { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningRecord {
    pub k: usize,
    pub nx: usize,
    pub h: f64,
    pub eps: f64,
    pub kappa_stab: f64,
    /// `NaN` when the unstabilized system was not examined.
    pub kappa_unstab: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStudy {
    pub records: Vec<ConditioningRecord>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

impl ConditioningStudy {
    /// Slope of `log κ₂` against `log h` for one degree.
    pub fn slope(&self, k: usize, stabilized: bool) -> f64 {
        let mut r: Vec<_> = self.records.iter().filter(|r| r.k == k).collect();
        r.sort_by_key(|r| r.nx);
        let h: Vec<f64> = r.iter().map(|r| r.h).collect();
        let kappa: Vec<f64> = r
            .iter()
            .map(|r| if stabilized { r.kappa_stab } else { r.kappa_unstab })
            .collect();
        if h.len() < 2 || kappa.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        loglog_slope(&h, &kappa)
    }

    pub fn report(&self, name: &str) -> StudyReport {
        let mut rep = StudyReport::new(
            name,
            &["k", "nx", "h", "eps", "kappa2_stab", "kappa2_unstab", "slope_stab", "slope_unstab"],
        );
        let mut recs = self.records.clone();
        recs.sort_by(|a, b| (a.k, a.nx).cmp(&(b.k, b.nx)));
        for r in &recs {
            rep.rows.push(vec![
                r.k.to_string(),
                r.nx.to_string(),
                fmt_float(r.h),
                fmt_float(r.eps),
                fmt_float(r.kappa_stab),
                fmt_float(r.kappa_unstab),
                fmt_float(self.slope(r.k, true)),
                fmt_float(self.slope(r.k, false)),
            ]);
        }
        rep
    }
}

fn domain_epsilon(kind: DomainKind) -> f64 {
    match kind {
        DomainKind::CutRectangle { eps } | DomainKind::CutPentagon { eps } => eps,
        _ => f64::NAN,
    }
}

/// κ₂ of one configuration; an unstabilized system that cannot be factored
/// counts as infinitely ill conditioned.
pub fn kappa(disc: &Discretization, config: &FormulationConfig) -> Result<f64, ExperimentError> {
    let system = assemble_system(disc, config, &ProblemData::zero())?.reduce();
    match condition_number(&system, ConditionMode::Full) {
        Ok(c) => Ok(c.kappa),
        Err(AnalysisError::SingularSystem(_)) if config.stabilization == Stabilization::None => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

pub fn run_conditioning(spec: &ExperimentSpec) -> Result<ConditioningStudy, ExperimentError> {
    spec.validate()?;
    let domain = build_domain(spec.domain, spec.bc);
    let mut records = Vec::new();
    for &k in &spec.degrees {
        for &nx in &spec.refinements {
            let disc = Discretization::new(&domain, nx, k)?;
            let tag = format!("k{k}_nx{nx}");
            let config = spec.config(k, spec.stabilization);
            dump_artifacts(spec, &disc, &config, &tag)?;
            let kappa_stab = kappa(&disc, &config)?;
            let kappa_unstab = if spec.compare_unstabilized && spec.stabilization != Stabilization::None {
                let c = spec.config(k, Stabilization::None);
                dump_artifacts(spec, &disc, &c, &tag)?;
                kappa(&disc, &c)?
            } else {
                f64::NAN
            };
            records.push(ConditioningRecord {
                k,
                nx,
                h: disc.h(),
                eps: domain_epsilon(spec.domain),
                kappa_stab,
                kappa_unstab,
            });
        }
    }
    Ok(ConditioningStudy { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonRecord {
    pub eps: f64,
    pub k: usize,
    pub nx: usize,
    pub h: f64,
    pub stab: Result<RunOutcome, String>,
    pub unstab: Option<Result<RunOutcome, String>>,
    pub kappa_stab: f64,
    pub kappa_unstab: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonStudy {
    pub records: Vec<EpsilonRecord>,
}

impl EpsilonStudy {
    pub fn report(&self, name: &str) -> StudyReport {
        let mut rep = StudyReport::new(
            name,
            &[
                "k",
                "nx",
                "h",
                "eps",
                "vel_l2_stab",
                "pres_l2_stab",
                "vel_l2_unstab",
                "pres_l2_unstab",
                "kappa2_stab",
                "kappa2_unstab",
            ],
        );
        let pick = |o: Option<&Result<RunOutcome, String>>, f: fn(&NormReport) -> f64| match o {
            Some(Ok(o)) => f(&o.norms),
            _ => f64::NAN,
        };
        for r in &self.records {
            rep.rows.push(vec![
                r.k.to_string(),
                r.nx.to_string(),
                fmt_float(r.h),
                fmt_float(r.eps),
                fmt_float(pick(Some(&r.stab), |n| n.vel_l2)),
                fmt_float(pick(Some(&r.stab), |n| n.pres_l2)),
                fmt_float(pick(r.unstab.as_ref(), |n| n.vel_l2)),
                fmt_float(pick(r.unstab.as_ref(), |n| n.pres_l2)),
                fmt_float(r.kappa_stab),
                fmt_float(r.kappa_unstab),
            ]);
        }
        rep
    }
}

pub fn run_epsilon_sweep(spec: &ExperimentSpec) -> Result<EpsilonStudy, ExperimentError> {
    spec.validate()?;
    let mut records = Vec::new();
    for &k in &spec.degrees {
        let exact = spec.solution.build(k);
        for &nx in &spec.refinements {
            for &eps in &spec.epsilons {
                let mut kind = spec.domain;
                if let DomainKind::CutRectangle { eps: e } | DomainKind::CutPentagon { eps: e } = &mut kind {
                    *e = eps;
                }
                let domain = build_domain(kind, spec.bc);
                let disc = Discretization::new(&domain, nx, k)?;
                let config = spec.config(k, spec.stabilization);
                dump_artifacts(spec, &disc, &config, &format!("k{k}_nx{nx}_eps{eps:e}"))?;
                let stab = run_single(&disc, &config, exact.clone()).map_err(|e| e.to_string());
                let kappa_stab = kappa(&disc, &config)?;
                let (unstab, kappa_unstab) = if spec.compare_unstabilized && spec.stabilization != Stabilization::None {
                    let c = spec.config(k, Stabilization::None);
                    (
                        Some(run_single(&disc, &c, exact.clone()).map_err(|e| e.to_string())),
                        kappa(&disc, &c)?,
                    )
                } else {
                    (None, f64::NAN)
                };
                records.push(EpsilonRecord {
                    eps,
                    k,
                    nx,
                    h: disc.h(),
                    stab,
                    unstab,
                    kappa_stab,
                    kappa_unstab,
                });
            }
        }
    }
    Ok(EpsilonStudy { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRun {
    pub stabilization: Stabilization,
    pub report: DivergenceReport,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceStudy {
    pub k: usize,
    pub nx: usize,
    pub runs: Vec<DivergenceRun>,
    /// Cell centres indexed by background cell.
    pub centres: Vec<Point>,
    /// Hash of the mesh classification shared by all runs.
    pub classification_hash: u64,
}

pub fn classification_hash(disc: &Discretization) -> u64 {
    let mut h = DefaultHasher::new();
    for c in &disc.cls.cell_class {
        match c {
            CellClass::Interior => 0u8,
            CellClass::Cut => 1,
            CellClass::Exterior => 2,
        }
        .hash(&mut h);
    }
    disc.cls.ghost_facets.hash(&mut h);
    for p in &disc.patches {
        p.cells.hash(&mut h);
    }
    h.finish()
}

impl DivergenceStudy {
    pub fn run(&self, stabilization: Stabilization) -> Option<&DivergenceRun> {
        self.runs.iter().find(|r| r.stabilization == stabilization)
    }

    pub fn report(&self, name: &str) -> StudyReport {
        let mut rep = StudyReport::new(
            name,
            &["k", "nx", "stab", "div_l2", "div_linf", "argmax_cell", "argmax_is_cut", "residual"],
        );
        for r in &self.runs {
            let (cell, cut) = r
                .report
                .argmax()
                .map(|(c, cut, _)| (c.to_string(), cut.to_string()))
                .unwrap_or_default();
            rep.rows.push(vec![
                self.k.to_string(),
                self.nx.to_string(),
                stab_name(r.stabilization).to_string(),
                fmt_float(r.report.div_l2),
                fmt_float(r.report.div_linf),
                cell,
                cut,
                fmt_float(r.residual),
            ]);
        }
        rep
    }

    /// One row per active cell: centre and max `|div u_h|` of every run.
    pub fn cell_report(&self, name: &str) -> StudyReport {
        let mut header = vec!["cell".to_string(), "x".into(), "y".into(), "is_cut".into()];
        header.extend(self.runs.iter().map(|r| format!("div_{}", stab_name(r.stabilization))));
        let mut rep = StudyReport {
            name: name.to_string(),
            header,
            rows: Vec::new(),
        };
        let Some(first) = self.runs.first() else {
            return rep;
        };
        for (i, &(c, cut, _)) in first.report.per_cell.iter().enumerate() {
            let mut row = vec![
                c.to_string(),
                fmt_float(self.centres[c][0]),
                fmt_float(self.centres[c][1]),
                cut.to_string(),
            ];
            row.extend(self.runs.iter().map(|r| fmt_float(r.report.per_cell[i].2)));
            rep.rows.push(row);
        }
        rep
    }
}

pub fn run_divergence_study(spec: &ExperimentSpec) -> Result<DivergenceStudy, ExperimentError> {
    spec.validate()?;
    let k = spec.degrees[0];
    let nx = spec.refinements[0];
    let domain = build_domain(spec.domain, spec.bc);
    let exact = spec.solution.build(k);
    let mut runs = Vec::new();
    let mut hash = None;
    let mut centres = Vec::new();
    let mut order = vec![Stabilization::None];
    if spec.stabilization != Stabilization::None {
        order.push(spec.stabilization);
    }
    for stab in order {
        // every run rebuilds its own mesh artifacts
        let disc = Discretization::new(&domain, nx, k)?;
        let h = classification_hash(&disc);
        assert_eq!(*hash.get_or_insert(h), h, "classification differs between runs");
        centres = (0..disc.mesh.num_cells())
            .map(|c| {
                let r = disc.mesh.cell_rect(c);
                [0.5 * (r.min[0] + r.max[0]), 0.5 * (r.min[1] + r.max[1])]
            })
            .collect();
        let config = spec.config(k, stab);
        dump_artifacts(spec, &disc, &config, &format!("k{k}_nx{nx}"))?;
        let data = ProblemData::from_exact(exact.clone());
        let system = assemble_system(&disc, &config, &data)?;
        let sol = solve(&system)?;
        let rules = ErrorRules::new(&disc)?;
        let e = exact.clone();
        let report = divergence_report(&disc, &rules, &sol.velocity, &move |x| e.divergence(x));
        runs.push(DivergenceRun {
            stabilization: stab,
            report,
            residual: sol.residual,
        });
    }
    Ok(DivergenceStudy {
        k,
        nx,
        runs,
        centres,
        classification_hash: hash.unwrap_or(0),
    })
}

/// Result of [`run_experiment`], ready for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<StudyReport>,
    /// A stabilized solve failed or its residual exceeded the tolerance.
    pub numerical_failure: bool,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    if let Some(dir) = &spec.output {
        std::fs::create_dir_all(dir)?;
    }
    let out = match spec.kind {
        ExperimentKind::Convergence => {
            let s = run_convergence(spec)?;
            ExperimentOutput {
                numerical_failure: s.has_stabilized_failure(),
                reports: vec![s.report(&spec.name)],
            }
        }
        ExperimentKind::Conditioning => {
            let s = run_conditioning(spec)?;
            ExperimentOutput {
                numerical_failure: s.records.iter().any(|r| !r.kappa_stab.is_finite()),
                reports: vec![s.report(&spec.name)],
            }
        }
        ExperimentKind::EpsilonSweep => {
            let s = run_epsilon_sweep(spec)?;
            ExperimentOutput {
                numerical_failure: s
                    .records
                    .iter()
                    .any(|r| r.stab.as_ref().map(|o| o.flagged).unwrap_or(true)),
                reports: vec![s.report(&spec.name)],
            }
        }
        ExperimentKind::Divergence => {
            let s = run_divergence_study(spec)?;
            ExperimentOutput {
                numerical_failure: false,
                reports: vec![s.report(&spec.name), s.cell_report(&format!("{}_cells", spec.name))],
            }
        }
    };
    if let Some(dir) = &spec.output {
        for r in &out.reports {
            r.write_csv(std::fs::File::create(dir.join(format!("{}.csv", r.name)))?)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_solution(e: &dyn ExactSolution, seed: u64) {
        let d = 1e-5;
        let mut s = seed;
        for _ in 0..20 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = [(s >> 11) as f64 / (1u64 << 53) as f64, ((s >> 7) % 1000) as f64 / 1000.0];
            let p = |x: Point| e.pressure(x);
            let gp = [
                (p([x[0] + d, x[1]]) - p([x[0] - d, x[1]])) / (2.0 * d),
                (p([x[0], x[1] + d]) - p([x[0], x[1] - d])) / (2.0 * d),
            ];
            let g = e.pressure_gradient(x);
            assert!((gp[0] - g[0]).abs() < 1e-6 && (gp[1] - g[1]).abs() < 1e-6);
            let u = |x: Point| e.velocity(x);
            let div = (u([x[0] + d, x[1]])[0] - u([x[0] - d, x[1]])[0]) / (2.0 * d)
                + (u([x[0], x[1] + d])[1] - u([x[0], x[1] - d])[1]) / (2.0 * d);
            assert!((div - e.divergence(x)).abs() < 1e-5 * (1.0 + div.abs()));
        }
    }

    #[test]
    fn manufactured_derivatives_are_consistent() {
        check_solution(&PentagonSolution, 1);
        check_solution(&CircleSolution, 2);
        check_solution(&PlateSolution, 3);
        for k in 0..4 {
            check_solution(&PolynomialSolution { k }, 4 + k as u64);
        }
    }

    #[test]
    fn circle_velocity_is_the_pressure_gradient() {
        let e = CircleSolution;
        let data = ProblemData::from_exact(Arc::new(e));
        for x in [[0.1, 0.7], [0.45, 0.2], [0.9, 0.9]] {
            let f = (data.f)(x);
            assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
        }
    }

    #[test]
    fn registry_is_complete_and_valid() {
        for name in registry_names() {
            let s = registry(name).unwrap();
            assert_eq!(s.name, name);
            s.validate().unwrap();
        }
        assert!(matches!(registry("nope"), Err(SpecError::UnknownExperiment(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = registry("pentagon-convergence").unwrap();
        s.refinements = vec![16, 8];
        assert_eq!(s.validate(), Err(SpecError::NotIncreasing));
        s.refinements = vec![8];
        s.degrees = vec![4];
        assert_eq!(s.validate(), Err(SpecError::UnsupportedDegree(4)));
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(f64::NAN), "NaN");
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(eoc(4.0, 1.0, 0.5, 0.25), 2.0);
        assert!((loglog_slope(&[1.0, 2.0, 4.0], &[1.0, 4.0, 16.0]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fullbox_polynomials_are_reproduced() {
        let mut s = registry("fullbox-exactness").unwrap();
        s.refinements = vec![2, 4];
        let study = run_convergence(&s).unwrap();
        for r in &study.records {
            let n = r.outcome.as_ref().unwrap().norms;
            assert!(n.vel_l2 < 1e-10 && n.pres_l2 < 1e-10 && n.triple < 1e-10, "{r:?}");
        }
        let csv = study.report(&s.name).to_csv_string();
        assert!(csv.lines().nth(1).unwrap().contains("NaN"));
        assert_eq!(csv, run_convergence(&s).unwrap().report(&s.name).to_csv_string());
    }

    #[test]
    fn fullbox_conditioning_ignores_stabilization() {
        let mut s = registry("rectangle-conditioning-neumann").unwrap();
        s.domain = DomainKind::FullBox;
        s.degrees = vec![0];
        s.refinements = vec![4];
        let c = run_conditioning(&s).unwrap();
        let r = &c.records[0];
        assert!(((r.kappa_stab - r.kappa_unstab) / r.kappa_stab).abs() < 1e-10);
    }
}
