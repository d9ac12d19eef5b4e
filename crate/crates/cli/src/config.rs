//! Run configuration: the TOML schema and its translation into models,
//! abstract games and learner settings.

use std::path::{Path, PathBuf};

use compsynth_core::game::AbstractGame;
use compsynth_core::learner::{InitialStates, LearnConfig, LearningRate, Stage};
use compsynth_core::model::{
    room_subsystem, traffic_subsystem, NetworkModel, SubsystemModel, SubsystemParams, Wire,
};
use compsynth_core::quantize::{abstraction_error, Grid, InputGrid, InternalGridMode};
use compsynth_core::spec_lang::{
    parse_scltl, to_dfa, BoxRegion, LabelingFunction, RewardMachine, RewardMode,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory receiving artifacts and CSV output.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub network: NetworkSection,
    pub grid: GridSection,
    pub spec: SpecSection,
    pub learn: LearnSection,
    pub evaluate: EvaluateSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builder {
    Room,
    Traffic,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub builder: Builder,
    /// Number of subsystems for the `room` and `traffic` builders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Whether the dynamics may be used for exact evaluation.
    #[serde(default = "yes")]
    pub model_known: bool,
    /// Lipschitz constants for the built-in subsystems; the analytic
    /// Gaussian-kernel constants are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<Lipschitz>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsystems: Vec<SubsystemSection>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lipschitz {
    pub h_x: f64,
    pub h_w: f64,
}

/// Coefficients of one subsystem of a `custom` network. Matrices are
/// row-major; `a` holds one matrix per external input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSection {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub inputs: Vec<f64>,
    #[serde(default)]
    pub internal_lo: Vec<f64>,
    #[serde(default)]
    pub internal_hi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: Vec<f64>,
    pub r: Vec<f64>,
    pub lipschitz: Lipschitz,
    /// `[source subsystem, state component]` per internal channel.
    #[serde(default)]
    pub wires: Vec<[usize; 2]>,
    /// Overrides the network-wide grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InternalGrid {
    Cartesian,
    PerAxisSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub delta: f64,
    pub mu: f64,
    #[serde(default = "default_internal_grid")]
    pub internal_grid: InternalGrid,
}

fn default_internal_grid() -> InternalGrid {
    InternalGrid::Cartesian
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Base,
    Shaped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub name: String,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecSection {
    pub formula: String,
    pub horizon: usize,
    #[serde(default = "default_reward")]
    pub reward: RewardKind,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Atomic propositions in declaration order, each labeling a box.
    #[serde(rename = "atom")]
    pub atoms: Vec<AtomSection>,
}

fn default_reward() -> RewardKind {
    RewardKind::Shaped
}

fn default_kappa() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Linear,
    RobbinsMonro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// Every episode starts at the evaluation initial state.
    Point,
    /// Uniform over `initial_lo..initial_hi`.
    Uniform,
    /// Uniform over all game nodes.
    Exploring,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub state_factor: usize,
    #[serde(default = "one")]
    pub input_factor: usize,
    /// Episode budget; when no stage gives one the total is split equally.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub episodes: u64,
    #[serde(default = "default_rate")]
    pub rate: RateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm_c: Option<f64>,
    pub explore: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_initial")]
    pub initial: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_hi: Option<Vec<f64>>,
    /// Train one table per class of identical subsystems.
    #[serde(default = "yes")]
    pub share_policy: bool,
    #[serde(default, rename = "stage", skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageSection>,
}

fn default_rate() -> RateKind {
    RateKind::Linear
}

fn default_discount() -> f64 {
    1.0
}

fn default_initial() -> InitialKind {
    InitialKind::Point
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Closed-loop network runs, both for the sampled estimate and for the
    /// percentile trajectories.
    pub samples: u64,
    /// Runs of the learned pair on each abstract game.
    #[serde(default = "default_adversarial_samples")]
    pub adversarial_samples: u64,
    /// Initial state: one subsystem state applied to all, or all states
    /// concatenated.
    pub x0: Vec<f64>,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
}

fn default_adversarial_samples() -> u64 {
    1_000_000
}

fn default_percentiles() -> Vec<f64> {
    vec![1.0, 10.0, 50.0, 90.0, 99.0]
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Parse and validate; errors carry the line of the offending key when
    /// it can be located.
    pub fn parse(src: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => CliError::Config(format!(
                    "config line {}: {msg}",
                    line_of_offset(src, span.start)
                )),
                None => CliError::Config(format!("config: {msg}")),
            }
        })?;
        cfg.validate()
            .map_err(|(key, msg)| match key.and_then(|k| locate(src, k)) {
                Some(line) => CliError::Config(format!("config line {line}: {msg}")),
                None => CliError::Config(format!("config: {msg}")),
            })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&src)
    }

    fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        let n = self.n_subsystems();
        if n == 0 {
            return Err((Some("builder"), "network has no subsystems".into()));
        }
        match self.network.builder {
            Builder::Custom => {
                if self.network.size.is_some_and(|s| s != n) {
                    return Err((
                        Some("size"),
                        format!(
                            "size {} disagrees with {n} listed subsystems",
                            self.network.size.unwrap()
                        ),
                    ));
                }
                if self.network.lipschitz.is_some() {
                    return Err((
                        Some("lipschitz"),
                        "custom subsystems carry their own Lipschitz constants".into(),
                    ));
                }
            }
            _ => {
                if self.network.size.is_none() {
                    return Err((Some("builder"), "built-in networks need a size".into()));
                }
                if !self.network.subsystems.is_empty() {
                    return Err((
                        Some("builder"),
                        "subsystems are only listed for custom networks".into(),
                    ));
                }
            }
        }
        for g in std::iter::once(&self.grid).chain(
            self.network
                .subsystems
                .iter()
                .filter_map(|s| s.grid.as_ref()),
        ) {
            if !(g.delta > 0.0 && g.delta.is_finite()) {
                return Err((Some("delta"), "delta must be positive".into()));
            }
            if !(g.mu > 0.0 && g.mu.is_finite()) {
                return Err((Some("mu"), "mu must be positive".into()));
            }
        }
        if self.spec.horizon == 0 {
            return Err((Some("horizon"), "the horizon must be at least 1".into()));
        }
        if self.spec.atoms.is_empty() {
            return Err((
                Some("atom"),
                "at least one atomic proposition is needed".into(),
            ));
        }
        if !(self.spec.kappa >= 0.0 && self.spec.kappa.is_finite()) {
            return Err((
                Some("kappa"),
                "kappa must be finite and non-negative".into(),
            ));
        }
        let l = &self.learn;
        match l.rate {
            RateKind::Linear => {
                if l.alpha_start.is_none() || l.alpha_end.is_none() {
                    return Err((
                        Some("rate"),
                        "linear rate needs alpha_start and alpha_end".into(),
                    ));
                }
            }
            RateKind::RobbinsMonro => {
                if l.rm_c.is_none() {
                    return Err((Some("rate"), "robbins_monro rate needs rm_c".into()));
                }
            }
        }
        if l.initial == InitialKind::Uniform && (l.initial_lo.is_none() || l.initial_hi.is_none()) {
            return Err((
                Some("initial"),
                "uniform initial states need initial_lo and initial_hi".into(),
            ));
        }
        let given = l.stages.iter().filter(|s| s.episodes.is_some()).count();
        if given != 0 && given != l.stages.len() {
            return Err((
                Some("stage"),
                "give episodes for every stage or for none".into(),
            ));
        }
        if given != 0 {
            let sum: u64 = l.stages.iter().filter_map(|s| s.episodes).sum();
            if sum != l.episodes {
                return Err((
                    Some("episodes"),
                    format!("stage budgets sum to {sum}, not {}", l.episodes),
                ));
            }
        }
        if let Some(last) = l.stages.last() {
            if last.state_factor != 1 || last.input_factor != 1 {
                return Err((
                    Some("stage"),
                    "the last stage must use the final grids (factors 1)".into(),
                ));
            }
        }
        if l.stages
            .iter()
            .any(|s| s.state_factor == 0 || s.input_factor == 0)
        {
            return Err((
                Some("state_factor"),
                "refinement factors must be positive".into(),
            ));
        }
        let e = &self.evaluate;
        if e.samples == 0 || e.adversarial_samples == 0 {
            return Err((Some("samples"), "sample counts must be positive".into()));
        }
        if e.percentiles.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
            return Err((
                Some("percentiles"),
                "percentiles must lie strictly between 0 and 100".into(),
            ));
        }
        Ok(())
    }

    pub fn n_subsystems(&self) -> usize {
        match self.network.builder {
            Builder::Custom => self.network.subsystems.len(),
            _ => self.network.size.unwrap_or(0),
        }
    }

    /// The learner settings, with `seed` and `stream` filled in by the caller.
    pub fn learn_config(&self, x0: &[f64], seed: u64, stream: u64) -> LearnConfig {
        let l = &self.learn;
        let rate = match l.rate {
            RateKind::Linear => LearningRate::Linear {
                start: l.alpha_start.unwrap_or_default(),
                end: l.alpha_end.unwrap_or_default(),
            },
            RateKind::RobbinsMonro => LearningRate::RobbinsMonro {
                c: l.rm_c.unwrap_or_default(),
            },
        };
        let initial = match l.initial {
            InitialKind::Point => InitialStates::Point(x0.to_vec()),
            InitialKind::Uniform => InitialStates::Uniform {
                lo: l.initial_lo.clone().unwrap_or_default(),
                hi: l.initial_hi.clone().unwrap_or_default(),
            },
            InitialKind::Exploring => InitialStates::Exploring,
        };
        let n = l.stages.len() as u64;
        let schedule = l
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| Stage {
                state_factor: s.state_factor,
                input_factor: s.input_factor,
                episodes: s.episodes.unwrap_or_else(|| {
                    let share = l.episodes / n;
                    if i as u64 == n - 1 {
                        l.episodes - share * (n - 1)
                    } else {
                        share
                    }
                }),
            })
            .collect();
        LearnConfig {
            episodes: l.episodes,
            rate,
            explore: l.explore,
            discount: l.discount,
            initial,
            schedule,
            seed,
            stream,
        }
    }
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// First line assigning `key` (or opening a table named `key`).
fn locate(src: &str, key: &str) -> Option<usize> {
    src.lines()
        .position(|line| {
            let t = line.trim_start();
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest
                    .trim_start_matches('[')
                    .trim_end()
                    .trim_end_matches(']');
                return name.rsplit('.').next() == Some(key);
            }
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

/// Hex SHA-256 digests identifying what a learned table depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub model: String,
    pub grid: String,
    pub spec: String,
}

fn sha_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Raw 32-byte digest of a hex string produced by [`Fingerprint`].
pub fn hex_bytes(hex: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap_or(0);
    }
    out
}

pub fn bytes_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Subsystems sharing a model, grid and specification, hence one table.
pub struct Class {
    pub members: Vec<usize>,
    pub game: AbstractGame,
    pub grid: GridSection,
    pub fingerprint: Fingerprint,
}

impl Class {
    /// Abstraction error of the class's subsystems.
    pub fn epsilon(&self) -> f64 {
        let (h_x, h_w) = self.game.model().lipschitz();
        abstraction_error(
            self.game.horizon(),
            self.game.grid().lebesgue(),
            self.game.grid().max_width(),
            h_x,
            self.grid.mu,
            h_w,
        )
    }
}

/// Everything a command needs, built from a validated configuration.
pub struct Setup {
    pub cfg: RunConfig,
    pub network: NetworkModel,
    pub classes: Vec<Class>,
    pub class_of: Vec<usize>,
    pub x0: Vec<Vec<f64>>,
}

impl Setup {
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        let n = cfg.n_subsystems();
        let network = build_network(&cfg)?;
        let dim: Vec<usize> = network.subsystems().iter().map(|m| m.state_dim()).collect();
        let x0 = if cfg.evaluate.x0.len() == dim[0] && dim.iter().all(|&d| d == dim[0]) {
            vec![cfg.evaluate.x0.clone(); n]
        } else if cfg.evaluate.x0.len() == dim.iter().sum::<usize>() {
            let mut at = 0;
            dim.iter()
                .map(|&d| {
                    at += d;
                    cfg.evaluate.x0[at - d..at].to_vec()
                })
                .collect()
        } else {
            return Err(CliError::Config(
                "config: x0 fits neither one subsystem nor the whole network".into(),
            ));
        };

        let atom_names: Vec<&str> = cfg.spec.atoms.iter().map(|a| a.name.as_str()).collect();
        let formula = parse_scltl(&cfg.spec.formula, &atom_names)
            .map_err(|e| CliError::Config(format!("config: formula: {e}")))?;
        let dfa = to_dfa(&formula, atom_names.len(), cfg.spec.horizon)
            .map_err(|e| CliError::Config(format!("config: formula: {e}")))?;
        let mode = match cfg.spec.reward {
            RewardKind::Base => RewardMode::Base,
            RewardKind::Shaped => RewardMode::Shaped,
        };
        let rm = RewardMachine::new(dfa, mode, cfg.spec.kappa)
            .map_err(|e| CliError::Config(format!("config: {e}")))?;
        let regions = cfg
            .spec
            .atoms
            .iter()
            .map(|a| BoxRegion::new(a.lo.clone(), a.hi.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("config: atom region: {e}")))?;
        let labels =
            LabelingFunction::new(regions).map_err(|e| CliError::Config(format!("config: {e}")))?;
        let spec_key = format!(
            "{}|{:?}|{}|{:?}|{:?}",
            formula.display(&compsynth_core::spec_lang::atom_names(&atom_names)),
            cfg.spec.atoms,
            cfg.spec.horizon,
            cfg.spec.reward,
            cfg.spec.kappa
        );

        let mut classes: Vec<Class> = Vec::new();
        let mut class_of = Vec::with_capacity(n);
        for i in 0..n {
            let model = network.subsystem(i).clone();
            let grid = match cfg.network.builder {
                Builder::Custom => cfg.network.subsystems[i].grid.unwrap_or(cfg.grid),
                _ => cfg.grid,
            };
            let fingerprint = Fingerprint {
                model: sha_hex(&format!("{:?}", model.params())),
                grid: sha_hex(&format!("{grid:?}")),
                spec: sha_hex(&spec_key),
            };
            if cfg.learn.share_policy {
                if let Some(c) = classes.iter().position(|c| c.fingerprint == fingerprint) {
                    classes[c].members.push(i);
                    class_of.push(c);
                    continue;
                }
            }
            let game = build_game(model, &grid, rm.clone(), labels.clone(), cfg.spec.horizon)
                .map_err(|e| CliError::Config(format!("config: subsystem {i}: {e}")))?;
            class_of.push(classes.len());
            classes.push(Class {
                members: vec![i],
                game,
                grid,
                fingerprint,
            });
        }
        Ok(Setup {
            cfg,
            network,
            classes,
            class_of,
            x0,
        })
    }

    /// Initial state of the first member of class `c`.
    pub fn class_x0(&self, c: usize) -> &[f64] {
        &self.x0[self.classes[c].members[0]]
    }
}

fn build_game(
    model: SubsystemModel,
    grid: &GridSection,
    rm: RewardMachine,
    labels: LabelingFunction,
    horizon: usize,
) -> compsynth_core::Result<AbstractGame> {
    let (lo, hi) = model.state_box();
    let cells = Grid::uniform(lo, hi, grid.delta)?;
    let (ilo, ihi) = model.internal_box();
    let mode = match grid.internal_grid {
        InternalGrid::Cartesian => InternalGridMode::Cartesian,
        InternalGrid::PerAxisSum => InternalGridMode::PerAxisSum,
    };
    let inputs = InputGrid::new(ilo, ihi, grid.mu, mode)?;
    AbstractGame::new(model, cells, inputs, rm, labels, horizon)
}

fn build_network(cfg: &RunConfig) -> CliResult<NetworkModel> {
    let bad = |e: compsynth_core::Error| CliError::Config(format!("config: network: {e}"));
    let n = cfg.n_subsystems();
    let with_constants = |m: SubsystemModel| -> CliResult<SubsystemModel> {
        let (h_x, h_w) = match cfg.network.lipschitz {
            Some(l) => (l.h_x, l.h_w),
            None => m.gaussian_kernel_lipschitz().map_err(bad)?,
        };
        m.with_lipschitz(h_x, h_w).map_err(bad)
    };
    match cfg.network.builder {
        Builder::Room => {
            let base = NetworkModel::room(n).map_err(bad)?;
            let m = with_constants(room_subsystem())?;
            NetworkModel::new(vec![m; n], base.wiring().to_vec()).map_err(bad)
        }
        Builder::Traffic => {
            let base = NetworkModel::traffic(n).map_err(bad)?;
            let m = with_constants(traffic_subsystem())?;
            NetworkModel::new(vec![m; n], base.wiring().to_vec()).map_err(bad)
        }
        Builder::Custom => {
            let mut models = Vec::with_capacity(n);
            let mut wiring = Vec::with_capacity(n);
            for (i, s) in cfg.network.subsystems.iter().enumerate() {
                let m = SubsystemModel::new(SubsystemParams {
                    state_lo: s.state_lo.clone(),
                    state_hi: s.state_hi.clone(),
                    inputs: s.inputs.clone(),
                    internal_lo: s.internal_lo.clone(),
                    internal_hi: s.internal_hi.clone(),
                    a: s.a.clone(),
                    b: s.b.clone(),
                    c: s.c.clone(),
                    d: s.d.clone(),
                    r: s.r.clone(),
                    lipschitz_x: s.lipschitz.h_x,
                    lipschitz_w: s.lipschitz.h_w,
                })
                .map_err(|e| CliError::Config(format!("config: subsystem {i}: {e}")))?;
                models.push(m);
                wiring.push(
                    s.wires
                        .iter()
                        .map(|&[source, component]| Wire { source, component })
                        .collect(),
                );
            }
            NetworkModel::new(models, wiring).map_err(bad)
        }
    }
}
