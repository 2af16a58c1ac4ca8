//! Batch front end: `gen`, `train`, `infer-device`, `sweep`, `fuse`, `eval`.
//!
//! Every subcommand reads the resolved [`RunConfig`] (TOML file plus flag
//! overrides), writes its artifacts under the output directory and a
//! manifest echoing the resolved config. Nothing depends on the environment
//! or the clock, so repeated runs give byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::datamodel::{DeviceClass, Label, MixtureId, Modality, Role};
use crate::device_inference::{
    error_rates, labeled_features, rank_feature_subsets, FeatureSelection, FP_FEATURES,
};
use crate::error::{Error, Result};
use crate::fusion::{
    run_batch, train_models, DeviceMode, FusionModels, FusionRule, ModelConfig, PipelineConfig,
    PipelineOutput,
};
use crate::ingestion::{
    impute_training, read_dataset, split_protocol, write_dataset, ProtocolSplit,
};
use crate::metrics::{eer, evaluate};
use crate::quality_gate::{auto_thresholds, GateThresholds, SweepResult};
use crate::synthetic::{gen_dataset, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Off,
    /// Thresholds from the config file.
    Fixed,
    /// Thresholds swept on the training data.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/train.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<PathBuf>,
    /// Defaults to `<out_dir>/eval.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<PathBuf>,
    /// Defaults to `<out_dir>/models.toml`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("qfusion-out"),
            training: None,
            evaluation: None,
            models: None,
        }
    }
}

impl Paths {
    fn training(&self) -> PathBuf {
        self.training
            .clone()
            .unwrap_or_else(|| self.out_dir.join("train.csv"))
    }

    fn evaluation(&self) -> PathBuf {
        self.evaluation
            .clone()
            .unwrap_or_else(|| self.out_dir.join("eval.csv"))
    }

    fn models(&self) -> PathBuf {
        self.models
            .clone()
            .unwrap_or_else(|| self.out_dir.join("models.toml"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSettings {
    pub rule: FusionRule,
    pub device_mode: DeviceMode,
    pub gate: GateMode,
    /// Thresholds used with `gate = "fixed"`.
    pub fixed_gate: GateThresholds,
    /// 1-based face quality measure gated in `auto` mode.
    pub face_quality_index: usize,
    pub fingerprint_per_device: bool,
    /// Largest feature subset searched by `sweep`.
    pub max_subset: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            rule: FusionRule::LlrSum,
            device_mode: DeviceMode::Inferred,
            gate: GateMode::Auto,
            fixed_gate: GateThresholds::default(),
            face_quality_index: 1,
            fingerprint_per_device: false,
            max_subset: 3,
        }
    }
}

/// The whole run configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub fusion: FusionSettings,
    pub model: ModelConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    fn validate(&self) -> Result<()> {
        let p = self.model.training.prior;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!(
                "prior {p} must lie strictly inside (0, 1)"
            )));
        }
        FeatureSelection::new(
            self.model.face_features.indices().to_vec(),
            Modality::Face.quality_arity(),
        )?;
        FeatureSelection::new(
            self.model.fingerprint_features.indices().to_vec(),
            FP_FEATURES,
        )?;
        if self.fusion.face_quality_index == 0
            || self.fusion.face_quality_index > Modality::Face.quality_arity()
        {
            return Err(Error::Config(format!(
                "face_quality_index {} outside 1..={}",
                self.fusion.face_quality_index,
                Modality::Face.quality_arity()
            )));
        }
        Ok(())
    }
}

fn rule_parser() -> impl TypedValueParser<Value = FusionRule> {
    PossibleValuesParser::new(FusionRule::ALL.map(FusionRule::code))
        .map(|s| s.parse::<FusionRule>().expect("restricted to known rules"))
}

fn mode_parser() -> impl TypedValueParser<Value = DeviceMode> {
    PossibleValuesParser::new(DeviceMode::ALL.map(DeviceMode::code))
        .map(|s| s.parse::<DeviceMode>().expect("restricted to known modes"))
}

#[derive(Debug, Parser)]
#[command(
    name = "qfusion",
    version,
    about = "Quality-conditional multi-biometric score fusion"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed of the synthetic generator.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = rule_parser())]
    rule: Option<FusionRule>,
    #[arg(long, global = true, value_parser = mode_parser())]
    device_mode: Option<DeviceMode>,
    #[arg(long, global = true, value_enum)]
    gate: Option<GateMode>,
    /// Target prior used in calibrator training.
    #[arg(long, global = true, value_name = "P")]
    prior: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write per-access audit trails and echo the resolved config.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write synthetic training and evaluation score files.
    Gen,
    /// Fit calibrators, normalizers and device classifiers.
    Train,
    /// Report device-estimation error per condition.
    InferDevice,
    /// Quality-threshold sweep and device feature-subset search.
    Sweep,
    /// Fuse the evaluation accesses.
    Fuse,
    /// EER, HTER and DET points of the fused scores.
    Eval,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::InferDevice => "infer-device",
            Command::Sweep => "sweep",
            Command::Fuse => "fuse",
            Command::Eval => "eval",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml(&read(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
    }
    if let Some(rule) = cli.rule {
        cfg.fusion.rule = rule;
    }
    if let Some(mode) = cli.device_mode {
        cfg.fusion.device_mode = mode;
    }
    if let Some(gate) = cli.gate {
        cfg.fusion.gate = gate;
    }
    if let Some(prior) = cli.prior {
        cfg.model.training.prior = prior;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

struct Run {
    cfg: RunConfig,
    verbose: bool,
    written: Vec<PathBuf>,
}

impl Run {
    fn write(&mut self, path: PathBuf, contents: &str) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.written.push(path);
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    fn split(&self) -> Result<ProtocolSplit> {
        let training = read_dataset(&read(&self.cfg.paths.training())?, Role::Training)?;
        let evaluation = read_dataset(&read(&self.cfg.paths.evaluation())?, Role::Evaluation)?;
        split_protocol(&training, &evaluation)
    }

    fn models(&self) -> Result<FusionModels> {
        let path = self.cfg.paths.models();
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::MissingModel(format!("{} ({e}); run `train` first", path.display()))
        })?;
        Ok(toml::from_str(&text)?)
    }

    fn pipeline(&self, models: &FusionModels) -> Result<PipelineConfig> {
        let gate = match self.cfg.fusion.gate {
            GateMode::Off => None,
            GateMode::Fixed => Some(self.cfg.fusion.fixed_gate.clone()),
            GateMode::Auto => Some(models.gate.clone().ok_or_else(|| {
                Error::Config(
                    "models were trained without an auto gate; rerun `train --gate auto`".into(),
                )
            })?),
        }
        .filter(|g| !g.is_disabled());
        if gate != models.gate {
            return Err(Error::Config(
                "gate differs from the one the models were trained with; rerun `train` with the same --gate".into(),
            ));
        }
        let mut p = PipelineConfig::new(self.cfg.fusion.rule, self.cfg.fusion.device_mode)
            .with_gate(gate)
            .with_training_fallback(models)?;
        p.fingerprint_per_device = self.cfg.fusion.fingerprint_per_device;
        Ok(p)
    }

    fn gen(&mut self) -> Result<String> {
        let corpus = gen_dataset(&self.cfg.synth)?;
        self.write(self.cfg.paths.training(), &write_dataset(&corpus.training))?;
        self.write(
            self.cfg.paths.evaluation(),
            &write_dataset(&corpus.evaluation),
        )?;
        Ok(format!(
            "generated {} training and {} evaluation accesses (seed {})",
            corpus.training.accesses.len(),
            corpus.evaluation.accesses.len(),
            self.cfg.synth.seed
        ))
    }

    fn train(&mut self) -> Result<String> {
        let split = self.split()?;
        let gate = match self.cfg.fusion.gate {
            GateMode::Off => None,
            GateMode::Fixed => Some(self.cfg.fusion.fixed_gate.clone()),
            GateMode::Auto => {
                let imputed = impute_training(&split.train)?;
                let (gate, sweeps) = auto_thresholds(&imputed, self.cfg.fusion.face_quality_index)?;
                self.write(self.out("sweep.csv"), &sweep_csv(&sweeps))?;
                Some(gate)
            }
        };
        let models = train_models(&split.train, &self.cfg.model, gate.as_ref())?;
        self.write(self.cfg.paths.models(), &toml::to_string(&models)?)?;
        Ok(format!(
            "trained on {} accesses ({} genuine, {} impostor), gate {}",
            split.train.accesses.len(),
            split.train.n_target(),
            split.train.n_nontarget(),
            if models.gate.is_some() { "on" } else { "off" }
        ))
    }

    fn infer_device(&mut self) -> Result<String> {
        let split = self.split()?;
        let models = self.models()?;
        let train = impute_training(&split.train)?;
        let mut csv = String::from("modality,device,set,errors,total,rate\n");
        let mut summary = Vec::new();
        for modality in [Modality::Face, Modality::Fingerprint] {
            let model = models.qda(modality)?;
            let sel = match modality {
                Modality::Face => &models.face_features,
                Modality::Fingerprint => &models.fingerprint_features,
            };
            for (set, accesses) in [
                ("training", &train.accesses),
                ("evaluation", &split.eval.accesses),
            ] {
                let rates = error_rates(model, &labeled_features(accesses, modality, sel))?;
                for (device, count) in rates {
                    csv.push_str(&format!(
                        "{},{device},{set},{},{},{}\n",
                        modality.code(),
                        count.errors,
                        count.total,
                        count.rate()
                    ));
                    if set == "evaluation" {
                        summary.push(format!("{device} {:.2}%", 100.0 * count.rate()));
                    }
                }
            }
        }
        self.write(self.out("device_estimation.csv"), &csv)?;
        Ok(format!(
            "device estimation error (evaluation): {}",
            summary.join(", ")
        ))
    }

    fn sweep(&mut self) -> Result<String> {
        let split = self.split()?;
        let train = impute_training(&split.train)?;
        let (gate, sweeps) = auto_thresholds(&train, self.cfg.fusion.face_quality_index)?;
        self.write(self.out("sweep.csv"), &sweep_csv(&sweeps))?;

        let mut csv = String::from("modality,rank,features,training_error,evaluation_error\n");
        for modality in [Modality::Face, Modality::Fingerprint] {
            let all: Vec<usize> = match modality {
                Modality::Face => (1..=Modality::Face.quality_arity()).collect(),
                Modality::Fingerprint => (1..=FP_FEATURES).collect(),
            };
            let sel = FeatureSelection::new(
                all,
                match modality {
                    Modality::Face => Modality::Face.quality_arity(),
                    Modality::Fingerprint => FP_FEATURES,
                },
            )?;
            let training = labeled_features(&train.accesses, modality, &sel);
            let evaluation = labeled_features(&split.eval.accesses, modality, &sel);
            let ranked = rank_feature_subsets(
                &training,
                Some(&evaluation),
                self.cfg.fusion.max_subset,
                self.cfg.model.regularization,
            )?;
            for (rank, r) in ranked.iter().enumerate() {
                let features: Vec<String> =
                    r.selection.indices().iter().map(usize::to_string).collect();
                let eval_error = r.evaluation.as_ref().map_or(f64::NAN, |e| {
                    e.values().map(|c| c.rate()).sum::<f64>() / e.len().max(1) as f64
                });
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    modality.code(),
                    rank + 1,
                    features.join("-"),
                    r.balanced_training_error(),
                    eval_error
                ));
            }
        }
        self.write(self.out("feature_subsets.csv"), &csv)?;

        let chosen: Vec<String> = gate
            .thresholds
            .iter()
            .map(|(d, t)| format!("{d}={t}"))
            .collect();
        Ok(format!("chosen thresholds: {}", chosen.join(", ")))
    }

    fn fuse(&mut self) -> Result<String> {
        let split = self.split()?;
        let models = self.models()?;
        let pipeline = self.pipeline(&models)?;
        let outputs = run_batch(&split.eval.accesses, &pipeline, &models)?;
        let rule = self.cfg.fusion.rule;
        self.write(self.out(&format!("fused-{rule}.csv")), &fused_csv(&outputs))?;
        if self.verbose {
            let trail: String = outputs
                .iter()
                .flat_map(|o| {
                    o.trail
                        .iter()
                        .map(move |l| format!("{} {l}\n", o.access_id))
                })
                .collect();
            self.write(self.out(&format!("audit-{rule}.txt")), &trail)?;
        }
        Ok(format!("fused {} accesses with {rule}", outputs.len()))
    }

    fn eval(&mut self) -> Result<String> {
        let models = self.models()?;
        let pipeline = self.pipeline(&models)?;
        let rule = self.cfg.fusion.rule;
        let path = self.out(&format!("fused-{rule}.csv"));
        let rows = read_fused(&read(&path)?)?;
        let (genuine, impostor) = split_rows(rows.iter());
        let tau = pipeline.decision.threshold;
        let report = evaluate(&genuine, &impostor, &[0.0, tau])?;
        self.write(self.out(&format!("curve-{rule}.csv")), &report.curve_csv())?;
        self.write(self.out(&format!("det-{rule}.csv")), &report.det_csv())?;

        let mut by_mixture: BTreeMap<Option<u8>, Vec<&FusedRow>> = BTreeMap::new();
        for r in &rows {
            by_mixture.entry(r.mixture).or_default().push(r);
        }
        let mixtures = by_mixture
            .into_iter()
            .map(|(mixture, rows)| {
                let (g, i) = split_rows(rows.iter().copied());
                let devices = mixture.and_then(|m| MixtureId::new(m).ok());
                MixtureRow {
                    mixture: mixture.map_or_else(|| "unassigned".into(), |m| m.to_string()),
                    face_device: devices.map(|m| m.face_device().code().to_string()),
                    fingerprint_device: devices.map(|m| m.fingerprint_device().code().to_string()),
                    accesses: rows.len(),
                    genuine: g.len(),
                    impostor: i.len(),
                    eer: eer(&g, &i).ok().map(|e| e.rate),
                }
            })
            .collect();
        let doc = ReportDoc {
            rule: rule.code().to_string(),
            device_mode: self.cfg.fusion.device_mode.code().to_string(),
            gate: models.gate.is_some(),
            accesses: rows.len(),
            genuine: genuine.len(),
            impostor: impostor.len(),
            eer: report.eer.rate,
            eer_threshold: report.eer.threshold,
            hter_at_zero: report.hter_at[0].1,
            decision_threshold: tau,
            hter_at_decision_threshold: report.hter_at[1].1,
            mixture: mixtures,
        };
        self.write(
            self.out(&format!("report-{rule}.toml")),
            &toml::to_string(&doc)?,
        )?;
        Ok(format!(
            "{rule}: EER {:.2}%, HTER@0 {:.2}% over {} accesses",
            100.0 * doc.eer,
            100.0 * doc.hter_at_zero,
            doc.accesses
        ))
    }
}

/// Evaluation report as written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub rule: String,
    pub device_mode: String,
    pub gate: bool,
    pub accesses: usize,
    pub genuine: usize,
    pub impostor: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub hter_at_zero: f64,
    pub decision_threshold: f64,
    pub hter_at_decision_threshold: f64,
    pub mixture: Vec<MixtureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRow {
    pub mixture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint_device: Option<String>,
    pub accesses: usize,
    pub genuine: usize,
    pub impostor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FusedRow {
    access_id: String,
    mixture: Option<u8>,
    label: String,
    fused: f64,
    decision: String,
    face_device: String,
    fingerprint_device: String,
}

fn fused_csv(outputs: &[PipelineOutput]) -> String {
    let mut s =
        String::from("access_id,mixture,label,fused,decision,face_device,fingerprint_device\n");
    for o in outputs {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.access_id,
            o.mixture.map_or_else(String::new, |m| m.id().to_string()),
            o.label.code(),
            o.fused,
            match o.decision {
                crate::fusion::Decision::Accept => "accept",
                crate::fusion::Decision::Reject => "reject",
            },
            o.devices.face.map_or("", DeviceClass::code),
            o.devices.fingerprint.map_or("", DeviceClass::code),
        ));
    }
    s
}

fn read_fused(text: &str) -> Result<Vec<FusedRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

fn split_rows<'a>(rows: impl Iterator<Item = &'a FusedRow>) -> (Vec<f64>, Vec<f64>) {
    let (mut g, mut i) = (Vec::new(), Vec::new());
    for r in rows {
        match r.label.parse::<Label>() {
            Ok(Label::Target) => g.push(r.fused),
            Ok(Label::NonTarget) => i.push(r.fused),
            _ => {}
        }
    }
    (g, i)
}

fn sweep_csv(sweeps: &[SweepResult]) -> String {
    let mut s = String::from("group,threshold,kept,eer,chosen\n");
    for sweep in sweeps {
        for p in &sweep.curve {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                sweep.group,
                p.threshold,
                p.kept,
                p.eer.map_or_else(String::new, |e| e.to_string()),
                p.threshold == sweep.best
            ));
        }
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    artifacts: Vec<String>,
    config: &'a RunConfig,
}

fn execute(cli: &Cli) -> Result<String> {
    let cfg = resolve(cli)?;
    let mut run = Run {
        cfg,
        verbose: cli.verbose,
        written: Vec::new(),
    };
    let summary = match cli.command {
        Command::Gen => run.gen()?,
        Command::Train => run.train()?,
        Command::InferDevice => run.infer_device()?,
        Command::Sweep => run.sweep()?,
        Command::Fuse => run.fuse()?,
        Command::Eval => run.eval()?,
    };
    let manifest = Manifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: run.cfg.synth.seed,
        artifacts: run
            .written
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        config: &run.cfg,
    };
    let text = toml::to_string(&manifest)?;
    if cli.verbose {
        eprint!("{text}");
    }
    run.write(
        run.out(&format!("manifest-{}.toml", cli.command.name())),
        &text,
    )?;
    Ok(summary)
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("qfusion: error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
