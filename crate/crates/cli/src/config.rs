//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Later assignments win; command line
//! flags are applied after the file. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use decent::eval::CvConfig;
use decent::static_embed::StaticMode;
use decent::synthgen::SynthConfig;
use decent::training::TrainConfig;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "base seed: parameter init, generator, evaluation sampling"),
    ("data", "dataset directory"),
    ("out", "output directory or file"),
    ("checkpoint", "checkpoint file"),
    ("learning_rate", "Adam step size (1e-3)"),
    ("weight_decay", "decoupled weight decay (1e-5)"),
    ("beta1", "Adam first-moment decay (0.9)"),
    ("beta2", "Adam second-moment decay (0.999)"),
    ("adam_epsilon", "Adam denominator epsilon (1e-8)"),
    ("max_epochs", "joint training epochs (1000)"),
    ("patience", "early-stopping patience in epochs (10)"),
    ("pretrain_epochs", "pretraining epochs per interaction module (5)"),
    ("checkpoint_every", "also checkpoint every N epochs; 0 = only at the end (0)"),
    ("d_dyn", "dynamic embedding dimension (128)"),
    ("static_mode", "onehot | bourgain"),
    ("bourgain_copies", "Bourgain sets per scale; 0 = ceil(log2 n) (0)"),
    ("static_seed", "seed of the Bourgain sets (0)"),
    ("lambda_reconst", "reconstruction loss weight (1)"),
    ("lambda_temp", "temporal consistency loss weight (1)"),
    ("lambda_dom_doctor", "doctor Laplacian loss weight (0.1)"),
    ("lambda_dom_medication", "medication Laplacian loss weight (0.1)"),
    ("lambda_dom_room", "room Laplacian loss weight (0.1)"),
    ("preset", "generator preset: tiny | desk | paper_scaled (tiny)"),
    ("patients", "generator: patient count"),
    ("doctors", "generator: doctor count"),
    ("medications", "generator: medication count"),
    ("rooms", "generator: room count"),
    ("physician_interactions", "generator: physician interaction count"),
    ("medication_interactions", "generator: medication interaction count"),
    ("transfer_interactions", "generator: transfer interaction count"),
    ("horizon_days", "generator: study horizon in days"),
    ("cohorts", "generator: number of planted cohorts"),
    ("cohort_epsilon", "generator: probability of an off-cohort counterpart"),
    ("doctor_subset", "generator: preferred doctors per cohort"),
    ("medication_subset", "generator: preferred medications per cohort"),
    ("room_subset", "generator: preferred rooms per cohort"),
    ("micu_rate", "generator: MICU transfer rate of uncoupled patients"),
    ("cdi_rate", "generator: CDI rate of uncoupled patients"),
    ("label_coupling", "generator: probability outcomes follow the cohort"),
    ("static_dim", "generator: static patient feature count"),
    ("folds", "cross-validation folds (5)"),
    ("repetitions", "cross-validation repetitions (30)"),
    ("undersample", "undersample training folds: true | false (true)"),
    ("logreg_l2", "logistic regression L2 penalty (1e-3)"),
    ("logreg_epochs", "logistic regression gradient steps (500)"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub cv: CvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            out: None,
            checkpoint: None,
            checkpoint_every: 0,
            train: TrainConfig::default(),
            synth: SynthConfig::preset("tiny").expect("tiny preset exists"),
            cv: CvConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl RunConfig {
    /// Applies `pairs` in order, except that `preset` is applied first so
    /// the other generator keys refine it.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (k, v) in pairs.iter().filter(|(k, _)| k == "preset") {
            cfg.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => {
                self.seed = num(key, v)?;
                t.seed = self.seed;
                s.seed = self.seed;
                self.cv.seed = self.seed;
            }
            "data" => self.data = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "learning_rate" => t.adam.learning_rate = num(key, v)?,
            "weight_decay" => t.adam.weight_decay = num(key, v)?,
            "beta1" => t.adam.beta1 = num(key, v)?,
            "beta2" => t.adam.beta2 = num(key, v)?,
            "adam_epsilon" => t.adam.epsilon = num(key, v)?,
            "max_epochs" => t.max_epochs = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "pretrain_epochs" => t.pretrain_epochs = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "d_dyn" => t.d_dyn = num(key, v)?,
            "static_mode" => t.static_spec.mode = v.parse::<StaticMode>().map_err(|e| e.to_string())?,
            "bourgain_copies" => {
                t.static_spec.copies = match num::<usize>(key, v)? {
                    0 => None,
                    c => Some(c),
                }
            }
            "static_seed" => t.static_spec.seed = num(key, v)?,
            "lambda_reconst" => t.weights.reconst = num(key, v)?,
            "lambda_temp" => t.weights.temp = num(key, v)?,
            "lambda_dom_doctor" => t.weights.dom[0] = num(key, v)?,
            "lambda_dom_medication" => t.weights.dom[1] = num(key, v)?,
            "lambda_dom_room" => t.weights.dom[2] = num(key, v)?,
            "preset" => {
                let seed = s.seed;
                *s = SynthConfig::preset(v).map_err(|e| e.to_string())?;
                s.seed = seed;
            }
            "patients" => s.populations.patients = num(key, v)?,
            "doctors" => s.populations.doctors = num(key, v)?,
            "medications" => s.populations.medications = num(key, v)?,
            "rooms" => s.populations.rooms = num(key, v)?,
            "physician_interactions" => s.interactions[0] = num(key, v)?,
            "medication_interactions" => s.interactions[1] = num(key, v)?,
            "transfer_interactions" => s.interactions[2] = num(key, v)?,
            "horizon_days" => s.horizon_days = num(key, v)?,
            "cohorts" => s.cohorts = num(key, v)?,
            "cohort_epsilon" => s.epsilon = num(key, v)?,
            "doctor_subset" => s.subset_sizes[0] = Some(num(key, v)?),
            "medication_subset" => s.subset_sizes[1] = Some(num(key, v)?),
            "room_subset" => s.subset_sizes[2] = Some(num(key, v)?),
            "micu_rate" => s.micu_rate = num(key, v)?,
            "cdi_rate" => s.cdi_rate = num(key, v)?,
            "label_coupling" => s.label_coupling = num(key, v)?,
            "static_dim" => s.static_dim = num(key, v)?,
            "folds" => self.cv.folds = num(key, v)?,
            "repetitions" => self.cv.repetitions = num(key, v)?,
            "undersample" => self.cv.undersample = boolean(key, v)?,
            "logreg_l2" => self.cv.logreg.l2 = num(key, v)?,
            "logreg_epochs" => self.cv.logreg.epochs = num(key, v)?,
            other => return Err(format!("unknown config key {other:?} (see `decent keys`)")),
        }
        Ok(())
    }
}

pub fn parse_assignment(line: &str) -> Result<(String, String), String> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {line:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("missing key in {line:?}"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

pub fn read_file(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_assignment(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}
