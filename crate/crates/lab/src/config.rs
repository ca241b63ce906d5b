//! Line-oriented `key = value` experiment configuration.
//!
//! `#` starts a comment, blank lines are ignored and a later assignment
//! replaces an earlier one. Keys are checked against the set the chosen
//! experiment understands; the resolved configuration lists every key with
//! its effective value and parses back to the same run.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use d2dce_core::experiments::{
    plan_ablation, plan_instability, plan_mog, Component, ExperimentPlan, Method, MoGSpec,
};
use d2dce_core::losses::AdversarialKind;
use d2dce_core::trainer::RunConfig;

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    Mog,
    Instability,
    Ablation,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [
        Experiment::Mog,
        Experiment::Instability,
        Experiment::Ablation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Mog => "mog",
            Experiment::Instability => "instability",
            Experiment::Ablation => "ablation",
        }
    }

    fn default_data(self) -> &'static str {
        match self {
            Experiment::Instability => "ring",
            Experiment::Mog | Experiment::Ablation => "overlapped",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// One `key = value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub location: String,
}

/// Assignments in file order, overrides appended last.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub assignments: Vec<Assignment>,
}

fn split_assignment(text: &str, location: String) -> Result<Option<Assignment>> {
    let body = text.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let Some((key, value)) = body.split_once('=') else {
        return Err(LabError::Config {
            location,
            message: "expected `key = value`".into(),
        });
    };
    let key = key.trim();
    if key.is_empty() || key.contains(char::is_whitespace) {
        return Err(LabError::Config {
            location,
            message: format!("malformed key `{key}`"),
        });
    }
    Ok(Some(Assignment {
        key: key.to_string(),
        value: value.trim().to_string(),
        location,
    }))
}

impl ConfigFile {
    /// Parses file text; `origin` names the file in error locations.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut assignments = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(a) = split_assignment(line, format!("{origin}:{}", i + 1))? {
                assignments.push(a);
            }
        }
        Ok(Self { assignments })
    }

    /// Appends a command-line `key=value` override.
    pub fn push_override(&mut self, text: &str) -> Result<()> {
        let location = format!("--override {text}");
        match split_assignment(text, location.clone())? {
            Some(a) => {
                self.assignments.push(a);
                Ok(())
            }
            None => Err(LabError::Config {
                location,
                message: "empty override".into(),
            }),
        }
    }
}

/// Text form of a config value; `render` output parses back to the same value.
trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("cannot parse `{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, bool, f64);

impl Value for AdversarialKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e: d2dce_core::Error| e.to_string())
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl Value for Method {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e: d2dce_core::Error| e.to_string())
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl<T: Value> Value for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        let items: Vec<&str> = s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .collect();
        if items.is_empty() {
            return Err("expected a comma-separated list".into());
        }
        items.into_iter().map(T::parse_value).collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(Value::render)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;

macro_rules! run_keys {
    ($($field:ident),* $(,)?) => {
        &[$(
            (
                stringify!($field),
                (|c: &RunConfig| c.$field.render()) as Getter,
                (|c: &mut RunConfig, v: &str| {
                    c.$field = Value::parse_value(v)?;
                    Ok(())
                }) as Setter,
            ),
        )*]
    };
}

/// Training keys shared by every experiment. The seed, the conditioning
/// scheme and the TAC flag are set by the experiment itself.
static RUN_KEYS: &[(&str, Getter, Setter)] = run_keys!(
    batch_size,
    lr_d,
    lr_g,
    beta1,
    beta2,
    adam_eps,
    n_dis,
    total_iters,
    tau,
    lambda,
    m_p,
    m_n,
    mask_drop_p,
    ema_enabled,
    ema_decay,
    ema_start,
    adversarial,
    log_interval,
    eval_samples,
    z_dim,
    label_embed_dim,
    g_hidden_width,
    g_hidden_layers,
    d_hidden_width,
    d_hidden_layers,
    embed_dim,
    leaky_slope,
);

const DATA_KEYS: [&str; 7] = [
    "data",
    "ring_classes",
    "ring_radius",
    "ring_std",
    "means",
    "stds",
    "weights",
];

fn experiment_keys(e: Experiment) -> &'static [&'static str] {
    match e {
        Experiment::Mog => &["method"],
        Experiment::Instability => &["normalize"],
        Experiment::Ablation => &["p_values"],
    }
}

fn known_keys(e: Experiment) -> Vec<&'static str> {
    let mut keys = vec!["seeds", "seed"];
    keys.extend(experiment_keys(e));
    keys.extend(DATA_KEYS);
    keys.extend(
        RUN_KEYS
            .iter()
            .map(|(k, _, _)| *k)
            .filter(|&k| !(e == Experiment::Ablation && k == "mask_drop_p")),
    );
    keys
}

/// Fully resolved experiment: typed values plus the canonical key list.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub experiment: Experiment,
    pub run: RunConfig,
    pub seeds: Vec<u64>,
    pub spec: MoGSpec,
    pub methods: Vec<Method>,
    pub normalize: Vec<bool>,
    pub p_values: Vec<f64>,
    entries: Vec<(&'static str, String)>,
}

struct Lookup<'a> {
    values: HashMap<&'a str, &'a Assignment>,
    entries: Vec<(&'static str, String)>,
}

impl<'a> Lookup<'a> {
    /// Parses `key` from the file or from `default`; a key without either
    /// is reported as missing.
    fn get<T: Value>(
        &mut self,
        key: &'static str,
        default: Option<&str>,
        reason: &'static str,
    ) -> Result<T> {
        let (text, location) = match (self.values.get(key), default) {
            (Some(a), _) => (a.value.as_str(), a.location.clone()),
            (None, Some(d)) => (d, format!("default for `{key}`")),
            (None, None) => return Err(LabError::MissingKey { key, reason }),
        };
        let value = T::parse_value(text).map_err(|message| LabError::Config {
            location,
            message: format!("`{key}`: {message}"),
        })?;
        self.entries.push((key, value.render()));
        Ok(value)
    }
}

fn invalid_at(location: String, key: &str, err: impl fmt::Display) -> LabError {
    LabError::Config {
        location,
        message: format!("`{key}`: {err}"),
    }
}

/// Checks keys against the experiment and fills in defaults.
pub fn resolve(experiment: Experiment, file: &ConfigFile) -> Result<Resolved> {
    let known = known_keys(experiment);
    let mut values = HashMap::new();
    for a in &file.assignments {
        if !known.contains(&a.key.as_str()) {
            return Err(LabError::Config {
                location: a.location.clone(),
                message: format!("unknown key `{}` for the {experiment} experiment", a.key),
            });
        }
        // `seed` is accepted for a single seed and shares the `seeds` slot.
        let key = if a.key == "seed" {
            "seeds"
        } else {
            a.key.as_str()
        };
        values.insert(key, a);
    }
    let location_of = |key: &str| {
        values.get(key).map_or_else(
            || format!("default for `{key}`"),
            |a: &&Assignment| a.location.clone(),
        )
    };
    let mut look = Lookup {
        values: values.clone(),
        entries: Vec::new(),
    };

    let seeds: Vec<u64> = look.get("seeds", Some("0, 1, 2"), "")?;
    let mut methods = Vec::new();
    let mut normalize = Vec::new();
    let mut p_values = Vec::new();
    match experiment {
        Experiment::Mog => methods = look.get("method", None, "required by the mog experiment")?,
        Experiment::Instability => {
            normalize = look.get("normalize", None, "required by the instability experiment")?
        }
        Experiment::Ablation => {
            p_values = look.get("p_values", None, "required by the ablation experiment")?
        }
    }

    let data: String = match values.get("data") {
        Some(a) => a.value.clone(),
        None => experiment.default_data().to_string(),
    };
    look.entries.push(("data", data.clone()));
    let spec = match data.as_str() {
        "overlapped" => MoGSpec::overlapped(),
        "separated" => MoGSpec::separated(),
        "ring" => {
            let c: usize = look.get("ring_classes", Some("50"), "")?;
            let r: f64 = look.get("ring_radius", Some("3"), "")?;
            let s: f64 = look.get("ring_std", Some("0.5"), "")?;
            MoGSpec::ring(c, r, s)
                .map_err(|e| invalid_at(location_of("ring_classes"), "ring", e))?
        }
        "custom" => {
            let means: Vec<f64> = look.get("means", None, "required when data = custom")?;
            let stds: Vec<f64> = look.get("stds", None, "required when data = custom")?;
            let equal = vec![1.0 / means.len() as f64; means.len()].render();
            let weights: Vec<f64> = look.get("weights", Some(&equal), "")?;
            if stds.len() != means.len() || weights.len() != means.len() {
                return Err(invalid_at(
                    location_of("means"),
                    "means",
                    "means, stds and weights need equal lengths",
                ));
            }
            let components = means
                .iter()
                .zip(&stds)
                .zip(&weights)
                .map(|((&m, &s), &w)| Component {
                    mean: vec![m],
                    std: s,
                    weight: w,
                })
                .collect();
            MoGSpec::new(components).map_err(|e| invalid_at(location_of("means"), "means", e))?
        }
        other => {
            return Err(LabError::Config {
                location: location_of("data"),
                message: format!(
                    "`data`: unknown data set `{other}` (overlapped, separated, ring, custom)"
                ),
            })
        }
    };

    let mut run = RunConfig::default();
    for &(key, getter, setter) in RUN_KEYS {
        if experiment == Experiment::Ablation && key == "mask_drop_p" {
            continue;
        }
        let (text, location) = match (values.get(key), key) {
            (Some(a), _) => (a.value.clone(), a.location.clone()),
            // Tied defaults: m_n follows 1 - m_p and lambda follows tau when
            // only the driving key is set.
            (None, "m_n") if values.contains_key("m_p") => {
                ((1.0 - run.m_p).render(), "default 1 - m_p".into())
            }
            (None, "lambda") if values.contains_key("tau") => {
                (run.tau.render(), "default lambda = tau".into())
            }
            (None, _) => (getter(&run), format!("default for `{key}`")),
        };
        setter(&mut run, &text).map_err(|message| LabError::Config {
            location,
            message: format!("`{key}`: {message}"),
        })?;
        look.entries.push((key, getter(&run)));
    }
    run.validate().map_err(|e| LabError::Config {
        location: "resolved configuration".into(),
        message: e.to_string(),
    })?;

    Ok(Resolved {
        experiment,
        run,
        seeds,
        spec,
        methods,
        normalize,
        p_values,
        entries: look.entries,
    })
}

impl Resolved {
    /// Every key with its effective value, in canonical order.
    pub fn entries(&self) -> &[(&'static str, String)] {
        &self.entries
    }

    /// Config text that resolves to this same configuration.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# resolved configuration for the {} experiment\n",
            self.experiment
        );
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Training cells to run, in report order.
    pub fn plan(&self) -> Result<ExperimentPlan> {
        Ok(match self.experiment {
            Experiment::Mog => plan_mog(&self.methods, &self.spec, &self.run, &self.seeds),
            Experiment::Instability => {
                let mut plan: Option<ExperimentPlan> = None;
                for &n in &self.normalize {
                    let p = plan_instability(n, &self.spec, &self.run, &self.seeds)?;
                    match plan.as_mut() {
                        Some(all) => all.cells.extend(p.cells),
                        None => plan = Some(p),
                    }
                }
                plan.expect("normalize list is nonempty")
            }
            Experiment::Ablation => {
                plan_ablation(&self.p_values, &self.spec, &self.run, &self.seeds)?
            }
        })
    }
}
