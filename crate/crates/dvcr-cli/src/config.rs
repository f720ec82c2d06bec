//! Run settings: library defaults, then a versioned key=value config file,
//! then command-line flags, in increasing precedence. File entries and flag
//! overrides funnel through the same [`apply`] path, so both reject unknown
//! keys with the same error and the precedence rules stay trivially true.

use std::path::PathBuf;

use dvcr::{
    ChooserTrainConfig, Error, OpTrainConfig, PredictorSettings, Result, SynthConfig, TrainConfig,
};

pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub screenshots: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ranker: Option<PathBuf>,
    pub chooser: Option<PathBuf>,
    pub op: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// How the election answers its multiple-choice questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChooserChoice {
    Trained,
    Lexical,
    /// Always picks the ground-truth element (evaluation upper bound).
    ScriptedGt,
    /// Always abstains (evaluation lower bound).
    ScriptedNone,
}

impl ChooserChoice {
    pub fn parse(v: &str) -> Result<Self> {
        match v {
            "trained" => Ok(ChooserChoice::Trained),
            "lexical" => Ok(ChooserChoice::Lexical),
            "scripted:gt" => Ok(ChooserChoice::ScriptedGt),
            "scripted:none" => Ok(ChooserChoice::ScriptedNone),
            other => Err(Error::Config(format!(
                "unknown chooser {other:?} (expected trained, lexical, scripted:gt, or scripted:none)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub chooser_train: ChooserTrainConfig,
    pub op_train: OpTrainConfig,
    pub predict: PredictorSettings,
    pub chooser: ChooserChoice,
    pub op_oracle: bool,
    pub oracle_ranker: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            paths: Paths::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            chooser_train: ChooserTrainConfig::default(),
            op_train: OpTrainConfig::default(),
            predict: PredictorSettings::default(),
            chooser: ChooserChoice::Trained,
            op_oracle: false,
            oracle_ranker: false,
        }
    }
}

/// Parses `(section, key, value)` entries. The file must declare
/// `version = 1` at top level before any section; `#` starts a comment.
fn parse_entries(text: &str) -> Result<Vec<(String, String, String)>> {
    let mut section = String::new();
    let mut entries = Vec::new();
    let mut version_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config line {}: expected `key = value`, got {raw:?}",
                i + 1
            )));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if section.is_empty() && key == "version" {
            if value != CONFIG_VERSION {
                return Err(Error::Config(format!(
                    "unsupported config version {value:?}, this build reads version {CONFIG_VERSION}"
                )));
            }
            version_seen = true;
            continue;
        }
        entries.push((section.clone(), key, value));
    }
    if !version_seen {
        return Err(Error::Config(
            "config file must declare `version = 1` before any section".into(),
        ));
    }
    Ok(entries)
}

pub fn apply_file(s: &mut Settings, text: &str) -> Result<()> {
    for (section, key, value) in parse_entries(text)? {
        apply(s, &section, &key, &value)?;
    }
    Ok(())
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key} must be a number, got {value:?}")))
}

/// Applies one setting. Sections: `[paths]`, `[synth]`, `[train]`,
/// `[predict]`. Unknown sections or keys are errors, never ignored.
pub fn apply(s: &mut Settings, section: &str, key: &str, value: &str) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key `{key}` in section [{section}]"));
    match section {
        "paths" => {
            let slot = match key {
                "corpus" => &mut s.paths.corpus,
                "screenshots" => &mut s.paths.screenshots,
                "out" => &mut s.paths.out,
                "ranker" => &mut s.paths.ranker,
                "chooser" => &mut s.paths.chooser,
                "op" => &mut s.paths.op,
                "report" => &mut s.paths.report,
                _ => return Err(unknown()),
            };
            *slot = Some(PathBuf::from(value));
        }
        "synth" => match key {
            "pages" => s.synth.pages = num(key, value)?,
            "width" => s.synth.page_width = num(key, value)?,
            "height" => s.synth.page_height = num(key, value)?,
            "widgets" => s.synth.widgets_per_page = num(key, value)?,
            "distractors" => s.synth.distractor_groups = num(key, value)?,
            "m_planted" => s.synth.m_planted = num(key, value)?,
            "split" => s.synth.split = value.parse()?,
            "seed" => s.synth.seed = num(key, value)?,
            _ => return Err(unknown()),
        },
        "train" => match key {
            // Presets swap the whole training block; later keys override.
            "preset" => match value {
                "paper" => {
                    s.train = TrainConfig::default();
                    s.chooser_train = ChooserTrainConfig::default();
                    s.op_train = OpTrainConfig::default();
                }
                "synth" => {
                    s.train = TrainConfig::synth_preset();
                    s.chooser_train = ChooserTrainConfig::synth_preset();
                    s.op_train = OpTrainConfig::synth_preset();
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown train preset {other:?} (expected paper or synth)"
                    )))
                }
            },
            "seed" => {
                let v = num(key, value)?;
                s.train.seed = v;
                s.chooser_train.seed = v;
                s.op_train.seed = v;
            }
            "epochs" => s.train.epochs = num(key, value)?,
            "lr" => s.train.lr = num(key, value)?,
            "negatives" => s.train.negatives = num(key, value)?,
            "vocab_min_count" => s.train.vocab_min_count = num(key, value)?,
            "neighbor_source" => s.train.neighbor_source = value.parse()?,
            "d_model" => s.train.model.d_model = num(key, value)?,
            "layers" => s.train.model.layers = num(key, value)?,
            "heads" => s.train.model.heads = num(key, value)?,
            "ffn" => s.train.model.ffn = num(key, value)?,
            "max_seq" => s.train.model.max_seq = num(key, value)?,
            "m" => s.train.model.m = num(key, value)?,
            "d_v" => s.train.model.d_v = num(key, value)?,
            "d_h" => s.train.model.d_h = num(key, value)?,
            "patch" => s.train.model.patch = num(key, value)?,
            "chooser_epochs" => s.chooser_train.epochs = num(key, value)?,
            "chooser_lr" => s.chooser_train.lr = num(key, value)?,
            "op_epochs" => s.op_train.epochs = num(key, value)?,
            "op_lr" => s.op_train.lr = num(key, value)?,
            _ => return Err(unknown()),
        },
        "predict" => match key {
            "m" => s.predict.m = num(key, value)?,
            "k" => s.predict.k = num(key, value)?,
            "group_size" => s.predict.group_size = num(key, value)?,
            "max_rounds" => s.predict.max_rounds = num(key, value)?,
            "mode" => s.predict.mode = value.parse()?,
            "neighbor_source" => s.predict.neighbor_source = value.parse()?,
            "chooser" => s.chooser = ChooserChoice::parse(value)?,
            "op" => match value {
                "trained" => s.op_oracle = false,
                "oracle" => s.op_oracle = true,
                other => {
                    return Err(Error::Config(format!(
                        "op must be trained or oracle, got {other:?}"
                    )))
                }
            },
            "ranker" => match value {
                "trained" => s.oracle_ranker = false,
                "oracle" => s.oracle_ranker = true,
                other => {
                    return Err(Error::Config(format!(
                        "ranker must be trained or oracle, got {other:?}"
                    )))
                }
            },
            _ => return Err(unknown()),
        },
        "" => return Err(Error::Config(format!("unknown top-level key {key:?}"))),
        other => return Err(Error::Config(format!("unknown config section [{other}]"))),
    }
    Ok(())
}
