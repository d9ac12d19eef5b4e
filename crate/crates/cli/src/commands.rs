use std::fs;
use std::path::{Path, PathBuf};

use compsynth_core::analysis::{
    adversarial_chunk, compose, lower_bound, n_chunks, network_chunk, percentile_rows,
    trajectory_chunk, BoundSource, Estimate, LocalController,
};
use compsynth_core::learner::{extract_policies, multilevel_train, Policy, QTable, TableShape};
use compsynth_core::oracle::{best_response_value, build_kernel, induction, Objective, Player};
use sha2::{Digest, Sha256};

use crate::artifact::{self, Artifact, Manifest, TableEntry};
use crate::config::{bytes_hex, RunConfig, Setup};
use crate::error::{CliError, CliResult};
use crate::par::map_indexed;
use crate::report::*;

/// Command-line overrides of the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub episodes: Option<u64>,
    pub percentiles: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
}

pub struct Run {
    pub setup: Setup,
    pub workers: usize,
    pub config_sha256: String,
}

impl Run {
    pub fn new(mut cfg: RunConfig, o: &Overrides, workers: usize) -> CliResult<Self> {
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(n) = o.samples {
            cfg.evaluate.samples = n;
        }
        if let Some(p) = &o.percentiles {
            cfg.evaluate.percentiles = p.clone();
        }
        if let Some(out) = &o.output {
            cfg.output = out.clone();
        }
        if let Some(e) = o.episodes {
            if cfg.learn.stages.iter().any(|s| s.episodes.is_some()) {
                return Err(CliError::Config(
                    "--episodes cannot override explicit stage budgets".into(),
                ));
            }
            cfg.learn.episodes = e;
        }
        // Re-parse so that overridden values pass the same validation.
        let cfg = RunConfig::parse(&cfg.to_toml())?;
        // The output location does not affect results.
        let mut hashed = cfg.clone();
        hashed.output = PathBuf::new();
        let config_sha256 = bytes_hex(&Sha256::digest(hashed.to_toml().as_bytes()));
        Ok(Run {
            setup: Setup::new(cfg)?,
            workers: workers.max(1),
            config_sha256,
        })
    }

    pub fn load(path: &Path, o: &Overrides, workers: usize) -> CliResult<Self> {
        Self::new(RunConfig::load(path)?, o, workers)
    }

    fn cfg(&self) -> &RunConfig {
        &self.setup.cfg
    }

    fn out_dir(&self) -> CliResult<&Path> {
        let dir = self.cfg().output.as_path();
        fs::create_dir_all(dir).map_err(|e| CliError::unwritable(dir, e))?;
        Ok(dir)
    }

    fn metadata(&self) -> Metadata {
        let cfg = self.cfg();
        Metadata {
            seed: cfg.seed,
            config_sha256: self.config_sha256.clone(),
            subsystems: cfg.n_subsystems(),
            horizon: cfg.spec.horizon,
            formula: cfg.spec.formula.clone(),
            reward: format!("{:?}", cfg.spec.reward).to_lowercase(),
            model_known: cfg.network.model_known,
        }
    }

    /// Learned tables of every class, checked against the configuration.
    pub fn load_tables(&self) -> CliResult<Vec<QTable>> {
        let dir = self.cfg().output.as_path();
        let manifest = artifact::read_manifest(dir)?;
        let classes = &self.setup.classes;
        if manifest.tables.len() != classes.len() {
            return Err(CliError::Mismatch(format!(
                "manifest lists {} tables but the configuration has {} subsystem classes",
                manifest.tables.len(),
                classes.len()
            )));
        }
        let mut out = Vec::with_capacity(classes.len());
        for (entry, class) in manifest.tables.iter().zip(classes) {
            let art = artifact::read_table(&dir.join(&entry.file))?;
            if art.fingerprint != entry.fingerprint() {
                return Err(CliError::Mismatch(format!(
                    "{} disagrees with the manifest",
                    entry.file
                )));
            }
            for (what, a, b) in [
                ("model", &art.fingerprint.model, &class.fingerprint.model),
                ("grid", &art.fingerprint.grid, &class.fingerprint.grid),
                (
                    "specification",
                    &art.fingerprint.spec,
                    &class.fingerprint.spec,
                ),
            ] {
                if a != b {
                    return Err(CliError::Mismatch(format!(
                        "{} was learned for a different {what}",
                        entry.file
                    )));
                }
            }
            if entry.subsystems != class.members || art.table.shape() != TableShape::of(&class.game)
            {
                return Err(CliError::Mismatch(format!(
                    "{} does not fit subsystems {:?}",
                    entry.file, class.members
                )));
            }
            out.push(art.table);
        }
        Ok(out)
    }

    fn controllers<'a>(&'a self, policies: &'a [Policy]) -> Vec<LocalController<'a>> {
        self.setup
            .class_of
            .iter()
            .map(|&c| LocalController {
                game: &self.setup.classes[c].game,
                policy: &policies[c],
            })
            .collect()
    }

    pub fn learn(&self) -> CliResult<LearnReport> {
        let dir = self.out_dir()?;
        let cfg = self.cfg();
        let classes = &self.setup.classes;
        let tables = map_indexed(classes.len(), self.workers, |c| {
            let lc = cfg.learn_config(self.setup.class_x0(c), cfg.seed, c as u64);
            multilevel_train(&classes[c].game, &lc, |_| {})
        })?;
        let mut entries = Vec::new();
        let mut report = Vec::new();
        for (c, (class, table)) in classes.iter().zip(tables).enumerate() {
            let path = artifact::table_path(dir, c);
            let file = path.file_name().unwrap().to_string_lossy().into_owned();
            artifact::write_table(
                &path,
                &Artifact {
                    fingerprint: class.fingerprint.clone(),
                    table,
                },
            )?;
            let lc = cfg.learn_config(self.setup.class_x0(c), cfg.seed, c as u64);
            entries.push(TableEntry {
                file: file.clone(),
                subsystems: class.members.clone(),
                horizon: cfg.spec.horizon,
                episodes: lc.total_episodes(),
                model_sha256: class.fingerprint.model.clone(),
                grid_sha256: class.fingerprint.grid.clone(),
                spec_sha256: class.fingerprint.spec.clone(),
            });
            let g = &class.game;
            report.push(LearnClass {
                subsystems: class.members.clone(),
                file,
                episodes: lc.total_episodes(),
                stages: lc.schedule.len().max(1),
                cells: g.grid().n_cells(),
                external_inputs: g.n_u(),
                internal_actions: g.n_w(),
                state_input_pairs: g.state_input_pairs(),
            });
        }
        artifact::write_manifest(
            dir,
            &Manifest {
                format_version: artifact::VERSION,
                seed: cfg.seed,
                config_sha256: self.config_sha256.clone(),
                tables: entries,
            },
        )?;
        Ok(LearnReport {
            metadata: self.metadata(),
            classes: report,
        })
    }

    fn network_estimate(&self, policies: &[Policy]) -> CliResult<Estimate> {
        let cfg = self.cfg();
        let ctrls = self.controllers(policies);
        let n = cfg.evaluate.samples;
        let hits = map_indexed(n_chunks(n) as usize, self.workers, |ch| {
            network_chunk(
                &self.setup.network,
                &ctrls,
                &self.setup.x0,
                n,
                cfg.seed,
                ch as u64,
            )
        })?;
        Ok(Estimate::from_counts(hits.iter().sum(), n)?)
    }

    pub fn bound(&self) -> CliResult<BoundReport> {
        let cfg = self.cfg();
        let tables = self.load_tables()?;
        let policies: Vec<Policy> = tables.iter().map(extract_policies).collect();
        let known = cfg.network.model_known;
        let n = cfg.evaluate.adversarial_samples;
        let mut classes = Vec::new();
        for (c, class) in self.setup.classes.iter().enumerate() {
            let g = &class.game;
            let x0 = self.setup.class_x0(c);
            let rho = &policies[c];
            let p_plus = if known {
                Some(best_response_value(&build_kernel(g)?, rho, x0)?)
            } else {
                None
            };
            let seed = cfg.seed.wrapping_add(c as u64);
            let hits = map_indexed(n_chunks(n) as usize, self.workers, |ch| {
                adversarial_chunk(g, rho, rho, x0, n, seed, ch as u64)
            })?;
            let sampled = Estimate::from_counts(hits.iter().sum(), n)?;
            let (h_x, h_w) = g.model().lipschitz();
            classes.push(SubsystemBound {
                subsystems: class.members.clone(),
                delta: class.grid.delta,
                mu: class.grid.mu,
                lipschitz_x: h_x,
                lipschitz_w: h_w,
                epsilon: class.epsilon(),
                p_plus,
                p_plus_sampled: sampled.into(),
                p_bound: p_plus.unwrap_or(sampled.lo),
            });
        }
        let per_sys = |f: &dyn Fn(&SubsystemBound) -> f64| -> Vec<f64> {
            self.setup
                .class_of
                .iter()
                .map(|&c| f(&classes[c]))
                .collect()
        };
        let eps = per_sys(&|s| s.epsilon);
        let source = if known {
            BoundSource::Oracle
        } else {
            BoundSource::SampledLower
        };
        let comp = compose(per_sys(&|s| s.p_bound), eps.clone(), source)?;
        let p_low_sampled = lower_bound(&per_sys(&|s| s.p_plus_sampled.p), &eps)?;
        let p_sampled = self.network_estimate(&policies)?;
        Ok(BoundReport {
            metadata: self.metadata(),
            classes,
            network: NetworkBound {
                subsystems: self.setup.class_of.len(),
                source: if known { "oracle" } else { "sampled_lower" }.into(),
                epsilon: comp.epsilon,
                penalty: comp.penalty,
                p_low: comp.p_low,
                vacuous: comp.vacuous,
                p_low_sampled,
            },
            p_sampled: p_sampled.into(),
        })
    }

    /// Percentile trajectories of the closed-loop network, written as CSV.
    pub fn export_trajectories(&self, policies: &[Policy]) -> CliResult<PathBuf> {
        let cfg = self.cfg();
        let dir = self.out_dir()?;
        let ctrls = self.controllers(policies);
        let n = cfg.evaluate.samples;
        let horizon = self
            .setup
            .classes
            .iter()
            .map(|c| c.game.horizon())
            .max()
            .unwrap_or(0);
        let n_sys = self.setup.network.len();
        let mut all: Vec<Vec<Vec<f64>>> = (0..=horizon)
            .map(|_| (0..n_sys).map(|_| Vec::with_capacity(n as usize)).collect())
            .collect();
        // Chunks are simulated in waves to bound memory; percentiles do not
        // depend on the order in which runs are collected.
        let chunks = n_chunks(n) as usize;
        let mut start = 0;
        while start < chunks {
            let wave = self.workers.min(chunks - start);
            let parts = map_indexed(wave, self.workers, |i| {
                trajectory_chunk(
                    &self.setup.network,
                    &ctrls,
                    &self.setup.x0,
                    n,
                    cfg.seed,
                    (start + i) as u64,
                )
            })?;
            for part in parts {
                for (a, p) in all.iter_mut().zip(part) {
                    for (ai, pi) in a.iter_mut().zip(p) {
                        ai.extend(pi);
                    }
                }
            }
            start += wave;
        }
        let rows = percentile_rows(all, &cfg.evaluate.percentiles);
        let path = dir.join("percentiles.csv");
        write_percentiles(&path, &rows)?;
        Ok(path)
    }

    pub fn evaluate(&self) -> CliResult<EvaluateReport> {
        let tables = self.load_tables()?;
        let policies: Vec<Policy> = tables.iter().map(extract_policies).collect();
        let p_sampled = self.network_estimate(&policies)?;
        let csv = self.export_trajectories(&policies)?;
        Ok(EvaluateReport {
            metadata: self.metadata(),
            p_sampled: p_sampled.into(),
            percentile_csv: csv.display().to_string(),
        })
    }

    pub fn export_traj(&self) -> CliResult<PathBuf> {
        let tables = self.load_tables()?;
        let policies: Vec<Policy> = tables.iter().map(extract_policies).collect();
        self.export_trajectories(&policies)
    }

    pub fn oracle(&self) -> CliResult<OracleReport> {
        if !self.cfg().network.model_known {
            return Err(CliError::ModelUnknown);
        }
        let dir = self.out_dir()?;
        let learned = if dir.join(artifact::MANIFEST).exists() {
            Some(self.load_tables()?)
        } else {
            None
        };
        let classes = &self.setup.classes;
        let results = map_indexed(
            classes.len(),
            self.workers,
            |c| -> CliResult<(f64, Option<f64>, String)> {
                let g = &classes[c].game;
                let x0 = self.setup.class_x0(c);
                let kernel = build_kernel(g)?;
                let exact = induction(
                    &kernel,
                    Objective::Satisfaction,
                    Player::Optimal,
                    Player::Optimal,
                )?;
                let optimal = exact.initial_value(g, x0)?;
                let path = dir.join(format!("oracle-values-{c}.csv"));
                let io = |e: csv::Error| match e.into_kind() {
                    csv::ErrorKind::Io(e) => CliError::unwritable(&path, e),
                    other => CliError::Other(anyhow::anyhow!("{other:?}")),
                };
                let mut w = csv::Writer::from_path(&path).map_err(io)?;
                w.write_record(["k", "q", "slot", "value"]).map_err(io)?;
                for (k, qs) in g.live_states().iter().enumerate() {
                    for &q in qs {
                        if let Some(block) = exact.value_block(k, q) {
                            for (slot, v) in block.iter().enumerate() {
                                w.write_record([
                                    k.to_string(),
                                    q.to_string(),
                                    slot.to_string(),
                                    v.to_string(),
                                ])
                                .map_err(io)?;
                            }
                        }
                    }
                }
                w.flush().map_err(|e| CliError::unwritable(&path, e))?;
                let learned = match &learned {
                    Some(t) => Some(best_response_value(&kernel, &extract_policies(&t[c]), x0)?),
                    None => None,
                };
                Ok((optimal, learned, path.display().to_string()))
            },
        )?;
        Ok(OracleReport {
            metadata: self.metadata(),
            classes: classes
                .iter()
                .zip(results)
                .map(|(class, (optimal, learned, values_csv))| OracleClass {
                    subsystems: class.members.clone(),
                    optimal,
                    learned,
                    values_csv,
                })
                .collect(),
        })
    }
}
