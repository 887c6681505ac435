//! Run configuration assembly: defaults, then an optional config file, then
//! `name=value` overrides addressed by kebab-case parameter names.

use std::fs;
use std::path::Path;

use imboost::pipeline::RunConfig;
use serde_json::Value;

use crate::CliError;

/// A tunable exposed as a `--name VALUE` flag and as a sweep parameter.
pub struct Param {
    pub name: &'static str,
    /// Location inside the serialized `RunConfig`.
    pub path: &'static [&'static str],
    pub help: &'static str,
    /// Boolean switch that may be given without a value.
    pub switch: bool,
}

const fn param(name: &'static str, path: &'static [&'static str], help: &'static str) -> Param {
    Param {
        name,
        path,
        help,
        switch: false,
    }
}

const fn switch(name: &'static str, path: &'static [&'static str], help: &'static str) -> Param {
    Param {
        name,
        path,
        help,
        switch: true,
    }
}

pub const PARAMS: &[Param] = &[
    param("n0", &["n0"], "Initial mini-batch size [128]"),
    param("gamma", &["gamma"], "Batch growth factor per step [1.03]"),
    param("t0", &["t0"], "Plain-mean warm-up steps [10]"),
    param("t1", &["t1"], "Trimmed warm-up steps [40]"),
    param("t2", &["t2"], "Polarization steps [50]"),
    param("ta", &["ta"], "Query rounds; must divide t2 [5]"),
    param("seed", &["seed"], "Seed for splitting, training, and scoring [0]"),
    param("score-mc", &["score_mc"], "Noise draws averaged in final scores [16]"),
    param("lr", &["adam", "lr"], "Adam learning rate [0.001]"),
    param("beta1", &["adam", "beta1"], "Adam first-moment decay [0.9]"),
    param("beta2", &["adam", "beta2"], "Adam second-moment decay [0.999]"),
    param("k", &["loss", "k"], "Importance samples per evaluation [2]"),
    param("lambda1", &["loss", "lambda1"], "Weight of the labeled-inlier loss [2]"),
    param("lambda2", &["loss", "lambda2"], "Weight of the labeled-outlier loss [1]"),
    param("rho", &["loss", "rho"], "Trimming quantile [0.92]"),
    param("xi", &["loss", "xi"], "Threshold mixing weight [0.4]"),
    switch("decay-lambdas", &["loss", "decay_lambdas"], "Decay both lambdas geometrically [false]"),
    param("strategy", &["strategy"], "Query strategy: rd, cp, or mm [mm]"),
    param("alpha", &["alpha"], "Inlier-posterior target for mm queries [0.4]"),
    param("budget-mode", &["budget_mode"], "per-round or total [per-round]"),
    param("budget-per-round", &["budget_per_round"], "Fixed queries per round [size-based]"),
    param("hidden", &["hidden"], "Hidden widths, comma separated [64,64]"),
    param("latent-dim", &["latent_dim"], "Latent size [ceil(p/4) within 2..32]"),
    switch("trace-risks", &["trace_risks"], "Record per-class training risks [false]"),
    param("test-fraction", &["test_fraction"], "Held-out fraction [0.3]"),
    switch("eval-rounds", &["eval_rounds"], "Evaluate after every query round [true]"),
];

pub fn param_names() -> Vec<&'static str> {
    PARAMS.iter().map(|p| p.name).collect()
}

/// Read a JSON or (by extension) TOML config file.
pub fn load_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Interpret a command-line value: JSON when it parses (numbers, booleans,
/// `null`, lists), a comma list of numbers for list-valued parameters, and a
/// plain string otherwise.
fn parse_value(name: &str, raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if name == "hidden" && v.is_number() {
            return Value::Array(vec![v]);
        }
        return v;
    }
    if name == "hidden" {
        let parts: Option<Vec<Value>> = raw.split(',').map(|p| p.trim().parse::<u64>().ok().map(Value::from)).collect();
        if let Some(parts) = parts {
            return Value::Array(parts);
        }
    }
    Value::String(raw.to_string())
}

/// Set one parameter by name and return the re-validated config.
pub fn apply(config: &RunConfig, name: &str, raw: &str) -> Result<RunConfig, CliError> {
    apply_all(config, &[(name, raw)])
}

/// Set several parameters, validating only the result so that dependent
/// values (such as `t2` and `ta`) may change together.
pub fn apply_all<S: AsRef<str>>(config: &RunConfig, overrides: &[(S, S)]) -> Result<RunConfig, CliError> {
    let mut doc = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (name, raw) in overrides {
        let (name, raw) = (name.as_ref(), raw.as_ref());
        let path = PARAMS
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.path)
            .ok_or_else(|| CliError::Usage(format!("unknown parameter '{name}' (known: {})", param_names().join(", "))))?;
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut slot = &mut doc;
        for p in parents {
            slot = &mut slot[*p];
        }
        slot[*last] = parse_value(name, raw);
        // Deserialize per step so a type error names the offending flag.
        serde_json::from_value::<RunConfig>(doc.clone())
            .map_err(|e| CliError::Usage(format!("invalid value '{raw}' for {name}: {e}")))?;
    }
    let next: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Usage(e.to_string()))?;
    next.validate()?;
    Ok(next)
}
