//! End-to-end stages: data, codes, training, warm-up calibration and
//! evaluation. Each stage has an in-memory form and a file-backed command
//! that reads its upstream artifacts from the output directory and never
//! regenerates them.
//!
//! Output layout:
//!
//! ```text
//! out/
//!   data/manifest.csv, data/user_NNNN/data.bin
//!   server/base_vectors.csv                  server-visible
//!   clients/user_NNNN/codeword.txt           client-private
//!   train/model.ckpt, train/metrics.csv, train/checkpoints/round_NNNNN.ckpt
//!   calibrate/thresholds.csv
//!   eval/roc.csv, eval/summary.json, eval/roc.svg
//! ```

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::codeword::{
    assign_base_vectors, derive_secret, read_assignments, write_assignments, BaseVectorAssignment,
    SecretAssignment,
};
use crate::config::RunConfig;
use crate::ecc::{is_codeword, CodeSpec, CodewordFile};
use crate::error::{Error, Result};
use crate::federation::{
    render_metrics, run_federation_with, ClientState, ClientTarget, FederationRun, Method,
    RoundReport,
};
use crate::model::{init_params, load_checkpoint, save_checkpoint, ModelParams};
use crate::rng::derive_seed;
use crate::synth::{generate, load_dataset, save_dataset, UserDataset};
use crate::verification::{
    parse_roc_csv, read_thresholds, render_roc_csv, render_roc_svg, render_thresholds,
    split_trials, summarize, warmup_threshold, EvaluationSummary, RocCurve, Split, Threshold,
    Verifier,
};

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn base_vectors(&self) -> PathBuf {
        self.root.join("server").join("base_vectors.csv")
    }

    pub fn client_codeword(&self, user_index: usize) -> PathBuf {
        self.root
            .join("clients")
            .join(format!("user_{user_index:04}"))
            .join("codeword.txt")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn model(&self) -> PathBuf {
        self.train_dir().join("model.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.train_dir().join("metrics.csv")
    }

    pub fn checkpoint(&self, round: usize) -> PathBuf {
        self.train_dir()
            .join("checkpoints")
            .join(format!("round_{round:05}.ckpt"))
    }

    pub fn thresholds(&self) -> PathBuf {
        self.root.join("calibrate").join("thresholds.csv")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn roc(&self) -> PathBuf {
        self.eval_dir().join("roc.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.eval_dir().join("summary.json")
    }

    pub fn roc_svg(&self) -> PathBuf {
        self.eval_dir().join("roc.svg")
    }

    fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

/// Exclusive hold on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(layout: &Layout) -> Result<Self> {
        fs::create_dir_all(&layout.root)?;
        let path = layout.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Seed of one client's private random suffix.
pub fn client_seed(config: &RunConfig, user_index: usize) -> u64 {
    derive_seed(config.code.client_seed, &[user_index as u64])
}

/// Codes for every known user: the server's base vectors and each client's
/// derived secret.
pub fn derive_codes(
    config: &RunConfig,
) -> Result<(CodeSpec, Vec<BaseVectorAssignment>, Vec<SecretAssignment>)> {
    let spec = config.code_spec()?;
    let bases = assign_base_vectors(
        config.users(),
        config.code.base_bits,
        config.code.server_seed,
    )?;
    let secrets = bases
        .iter()
        .map(|b| derive_secret(&spec, b, client_seed(config, b.user_index)))
        .collect::<Result<_>>()?;
    Ok((spec, bases, secrets))
}

/// Client states for the configured method. Known users' positions double as
/// their class indices for the baselines.
pub fn build_clients(
    method: Method,
    known: &[UserDataset],
    secrets: Option<&[SecretAssignment]>,
) -> Result<Vec<ClientState>> {
    let others: Option<Arc<Vec<Vec<f64>>>> = match (method, secrets) {
        (Method::FeduvWithNeg, Some(s)) => {
            Some(Arc::new(s.iter().map(|x| x.bipolar().to_vec()).collect()))
        }
        _ => None,
    };
    known
        .iter()
        .enumerate()
        .map(|(i, data)| {
            let target = if method.uses_codewords() {
                let secrets = secrets.ok_or_else(|| {
                    Error::InvalidArgument(format!("{method} needs codeword secrets"))
                })?;
                let secret = secrets.get(i).ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: secrets.len(),
                })?;
                let others = others.as_ref().map(|all| {
                    let mut o = all.as_ref().clone();
                    o.remove(i);
                    Arc::new(o)
                });
                ClientTarget::Secret {
                    secret: secret.clone(),
                    others,
                }
            } else {
                ClientTarget::Class(i)
            };
            Ok(ClientState {
                user_index: data.user_index,
                data: data.train.clone(),
                target,
            })
        })
        .collect()
}

pub fn verifiers(
    method: Method,
    users: usize,
    secrets: Option<&[SecretAssignment]>,
) -> Result<Vec<Verifier>> {
    if method.uses_codewords() {
        let secrets = secrets
            .ok_or_else(|| Error::InvalidArgument(format!("{method} needs codeword secrets")))?;
        Ok(secrets.iter().map(Verifier::from_secret).collect())
    } else {
        Ok((0..users).map(Verifier::Class).collect())
    }
}

pub fn train<F>(
    config: &RunConfig,
    known: &[UserDataset],
    secrets: Option<&[SecretAssignment]>,
    observer: F,
) -> Result<FederationRun>
where
    F: FnMut(&RoundReport, &ModelParams) -> Result<()>,
{
    let clients = build_clients(config.federation.method, known, secrets)?;
    let init = init_params(
        &config.architecture(),
        config.projection_rows()?,
        config.model.init_seed,
    )?;
    run_federation_with(&config.federation, &clients, &init, observer)
}

/// Warm-up thresholds for every known user from its validation split.
pub fn calibrate(
    params: &ModelParams,
    verifiers: &[Verifier],
    known: &[UserDataset],
    q: f64,
) -> Result<Vec<(usize, Threshold)>> {
    known
        .iter()
        .zip(verifiers)
        .map(|(data, v)| Ok((data.user_index, warmup_threshold(params, v, &data.val, q)?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub curves: Vec<RocCurve>,
    pub summary: EvaluationSummary,
}

impl Evaluation {
    pub fn curve(&self, split: Split) -> Option<&RocCurve> {
        self.curves.iter().find(|c| c.split == split)
    }
}

pub fn evaluate(
    config: &RunConfig,
    params: &ModelParams,
    verifiers: &[Verifier],
    known: &[UserDataset],
    unknown: &[UserDataset],
    thresholds: Option<&[(usize, Threshold)]>,
) -> Result<Evaluation> {
    let taus: Option<Vec<f64>> = thresholds.map(|t| t.iter().map(|(_, th)| th.tau).collect());
    let trials = split_trials(
        params,
        verifiers,
        known,
        unknown,
        config.verification.impostors,
    )?;
    let mut curves = Vec::new();
    let mut splits = Vec::new();
    for (split, t) in &trials {
        let curve = RocCurve::from_trials(*split, t)?;
        splits.push(summarize(&curve, t, taus.as_deref())?);
        curves.push(curve);
    }
    Ok(Evaluation {
        curves,
        summary: EvaluationSummary {
            method: config.federation.method.to_string(),
            code_length: params.rows(),
            splits,
        },
    })
}

/// Whole experiment in memory, without touching the filesystem.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub run: FederationRun,
    pub thresholds: Vec<(usize, Threshold)>,
    pub evaluation: Evaluation,
}

pub fn run_experiment<F>(config: &RunConfig, observer: F) -> Result<Experiment>
where
    F: FnMut(&RoundReport, &ModelParams) -> Result<()>,
{
    config.validate()?;
    let (known, unknown) = generate(&config.data)?;
    let method = config.federation.method;
    let secrets = if method.uses_codewords() {
        Some(derive_codes(config)?.2)
    } else {
        None
    };
    let run = train(config, &known, secrets.as_deref(), observer)?;
    let verifiers = verifiers(method, known.len(), secrets.as_deref())?;
    let thresholds = calibrate(&run.params, &verifiers, &known, config.verification.q)?;
    let evaluation = evaluate(
        config,
        &run.params,
        &verifiers,
        &known,
        &unknown,
        Some(&thresholds),
    )?;
    Ok(Experiment {
        run,
        thresholds,
        evaluation,
    })
}

pub fn cmd_gen_data(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let _lock = DirLock::acquire(&layout)?;
    let (known, unknown) = generate(&config.data)?;
    fs::create_dir_all(layout.data_dir())?;
    save_dataset(&layout.data_dir(), &known, &unknown)
}

/// Writes the server's base-vector file and, separately, each client's
/// private codeword file.
pub fn cmd_gen_codes(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(&config.out_dir);
    let _lock = DirLock::acquire(&layout)?;
    let (spec, bases, secrets) = derive_codes(config)?;
    fs::create_dir_all(layout.base_vectors().parent().unwrap())?;
    write_assignments(&layout.base_vectors(), &bases)?;
    for s in &secrets {
        let file = CodewordFile {
            c: spec.c,
            k: spec.k,
            m: spec.field.m,
            records: vec![(s.user_index(), s.codeword.clone())],
        };
        write_file(&layout.client_codeword(s.user_index()), file.render())?;
    }
    Ok(())
}

/// Rebuilds each client's secret from its private codeword file, checking
/// it against the server's base vector.
pub fn load_secrets(config: &RunConfig, layout: &Layout) -> Result<Vec<SecretAssignment>> {
    let spec = config.code_spec()?;
    let bases = read_assignments(&layout.base_vectors())?;
    bases
        .into_iter()
        .map(|base| {
            let path = layout.client_codeword(base.user_index);
            let file = CodewordFile::read(&path)?;
            let corrupt = |detail: &str| Error::CorruptFile {
                path: path.clone(),
                detail: detail.to_string(),
            };
            if (file.c, file.k) != (spec.c, spec.k) {
                return Err(corrupt("code parameters differ from the config"));
            }
            let (_, codeword) = file
                .records
                .into_iter()
                .find(|(u, _)| *u == base.user_index)
                .ok_or_else(|| corrupt("no record for this user"))?;
            let l_b = base.base_bits.len();
            if !is_codeword(&spec, &codeword.bits) || codeword.bits[..l_b] != base.base_bits[..] {
                return Err(corrupt("codeword does not extend the assigned base vector"));
            }
            Ok(SecretAssignment {
                random_bits: codeword.bits[l_b..spec.k].to_vec(),
                base,
                codeword,
            })
        })
        .collect()
}

type Inputs = (
    Vec<UserDataset>,
    Vec<UserDataset>,
    Option<Vec<SecretAssignment>>,
);

fn load_inputs(config: &RunConfig, layout: &Layout) -> Result<Inputs> {
    let (known, unknown) = load_dataset(&layout.data_dir())?;
    let secrets = if config.federation.method.uses_codewords() {
        Some(load_secrets(config, layout)?)
    } else {
        None
    };
    if known.len() != config.users() {
        return Err(Error::ConfigInvalid(format!(
            "dataset has {} known users but the config expects {}",
            known.len(),
            config.users()
        )));
    }
    Ok((known, unknown, secrets))
}

pub fn cmd_train(config: &RunConfig) -> Result<FederationRun> {
    let layout = Layout::new(&config.out_dir);
    let _lock = DirLock::acquire(&layout)?;
    let (known, _, secrets) = load_inputs(config, &layout)?;
    fs::create_dir_all(layout.train_dir())?;
    let every = config.checkpoint_every;
    let run = train(config, &known, secrets.as_deref(), |report, params| {
        if every > 0 && (report.round + 1) % every == 0 {
            let path = layout.checkpoint(report.round + 1);
            fs::create_dir_all(path.parent().unwrap())?;
            save_checkpoint(&path, params)?;
        }
        Ok(())
    })?;
    save_checkpoint(&layout.model(), &run.params)?;
    fs::write(layout.metrics(), render_metrics(&run.reports))?;
    Ok(run)
}

fn load_model(config: &RunConfig, layout: &Layout) -> Result<ModelParams> {
    let params = load_checkpoint(&layout.model())?;
    if params.arch() != &config.architecture() || params.rows() != config.projection_rows()? {
        return Err(Error::ConfigInvalid(
            "checkpoint shape does not match the config (method or model changed?)".into(),
        ));
    }
    Ok(params)
}

pub fn cmd_calibrate(config: &RunConfig) -> Result<Vec<(usize, Threshold)>> {
    let layout = Layout::new(&config.out_dir);
    let _lock = DirLock::acquire(&layout)?;
    require(&layout.model())?;
    let (known, _, secrets) = load_inputs(config, &layout)?;
    let params = load_model(config, &layout)?;
    let v = verifiers(config.federation.method, known.len(), secrets.as_deref())?;
    let thresholds = calibrate(&params, &v, &known, config.verification.q)?;
    write_file(&layout.thresholds(), render_thresholds(&thresholds))?;
    Ok(thresholds)
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<Evaluation> {
    let layout = Layout::new(&config.out_dir);
    let _lock = DirLock::acquire(&layout)?;
    require(&layout.model())?;
    let thresholds = read_thresholds(&layout.thresholds())?;
    let (known, unknown, secrets) = load_inputs(config, &layout)?;
    if thresholds.len() != known.len()
        || thresholds
            .iter()
            .zip(&known)
            .any(|((u, _), d)| *u != d.user_index)
    {
        return Err(Error::CorruptFile {
            path: layout.thresholds(),
            detail: "threshold users do not match the dataset".into(),
        });
    }
    let params = load_model(config, &layout)?;
    let v = verifiers(config.federation.method, known.len(), secrets.as_deref())?;
    let evaluation = evaluate(config, &params, &v, &known, &unknown, Some(&thresholds))?;
    write_file(&layout.roc(), render_roc_csv(&evaluation.curves))?;
    let json = serde_json::to_string_pretty(&evaluation.summary).expect("summary serializes");
    write_file(&layout.summary(), json + "\n")?;
    write_file(
        &layout.roc_svg(),
        render_roc_svg(&plot_title(config), &evaluation.curves),
    )?;
    Ok(evaluation)
}

fn plot_title(config: &RunConfig) -> String {
    format!("ROC ({})", config.federation.method)
}

/// Re-renders the SVG from an existing ROC CSV.
pub fn cmd_plot(config: &RunConfig, output: Option<&Path>) -> Result<PathBuf> {
    let layout = Layout::new(&config.out_dir);
    let roc = layout.roc();
    require(&roc)?;
    let curves = parse_roc_csv(&fs::read_to_string(&roc)?, &roc)?;
    let target = output.map_or_else(|| layout.roc_svg(), Path::to_path_buf);
    write_file(&target, render_roc_svg(&plot_title(config), &curves))?;
    Ok(target)
}

/// Every stage in order.
pub fn cmd_run(config: &RunConfig) -> Result<Evaluation> {
    cmd_gen_data(config)?;
    if config.federation.method.uses_codewords() {
        cmd_gen_codes(config)?;
    }
    cmd_train(config)?;
    cmd_calibrate(config)?;
    cmd_evaluate(config)
}
