//! Simulation-cell settings and their resolution into engine types.
//!
//! Every way of describing a run — built-in defaults, a config file's
//! `[defaults]` section, its `[cell]` sections, command-line flags — fills
//! the same optional key set; layers merge left to right and the merged
//! settings resolve into a validated cell.

use cartrial_core::{
    DgpKind, DgpSpec, Metric, ModelChoice, Scheme, SchemeSpec, SelectionRule, TestVariant,
    TrialConfig,
};

/// One cell's settings with every field optional so layers can merge.
#[derive(Clone, Debug, Default)]
pub struct CellSettings {
    pub dgp: Option<String>,
    pub model: Option<String>,
    pub scheme: Option<String>,
    pub test: Option<String>,
    pub metric: Option<String>,
    pub iota1: Option<f64>,
    pub iota2: Option<f64>,
    pub reps: Option<usize>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub bootstrap: Option<usize>,
    pub alpha: Option<f64>,
    pub block: Option<usize>,
    pub coin: Option<f64>,
    pub selection: Option<String>,
}

impl CellSettings {
    /// Later layer wins field by field.
    pub fn overlay(&self, over: &CellSettings) -> CellSettings {
        macro_rules! pick {
            ($f:ident) => {
                over.$f.clone().or_else(|| self.$f.clone())
            };
        }
        CellSettings {
            dgp: pick!(dgp),
            model: pick!(model),
            scheme: pick!(scheme),
            test: pick!(test),
            metric: pick!(metric),
            iota1: pick!(iota1),
            iota2: pick!(iota2),
            reps: pick!(reps),
            n1: pick!(n1),
            n2: pick!(n2),
            bootstrap: pick!(bootstrap),
            alpha: pick!(alpha),
            block: pick!(block),
            coin: pick!(coin),
            selection: pick!(selection),
        }
    }

    /// Set one field from a config-file key. Unknown keys and unparsable
    /// values are errors so typos never silently vanish.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("key '{key}' has unparsable value '{value}'"))
        }
        match key {
            "dgp" => self.dgp = Some(value.to_string()),
            "model" => self.model = Some(value.to_string()),
            "scheme" => self.scheme = Some(value.to_string()),
            "test" => self.test = Some(value.to_string()),
            "metric" => self.metric = Some(value.to_string()),
            "iota1" => self.iota1 = Some(num(key, value)?),
            "iota2" => self.iota2 = Some(num(key, value)?),
            "reps" => self.reps = Some(num(key, value)?),
            "n1" => self.n1 = Some(num(key, value)?),
            "n2" => self.n2 = Some(num(key, value)?),
            "bootstrap" => self.bootstrap = Some(num(key, value)?),
            "alpha" => self.alpha = Some(num(key, value)?),
            "block" => self.block = Some(num(key, value)?),
            "coin" => self.coin = Some(num(key, value)?),
            "selection" => self.selection = Some(value.to_string()),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }
}

/// A fully validated cell: canonical tokens for reporting plus the engine
/// configuration they denote.
#[derive(Clone, Debug)]
pub struct ResolvedCell {
    pub dgp_token: &'static str,
    pub model_token: &'static str,
    pub scheme_token: &'static str,
    pub test_token: &'static str,
    pub metric_token: &'static str,
    pub iota1: f64,
    pub iota2: f64,
    pub reps: usize,
    pub dgp: DgpSpec,
    pub config: TrialConfig,
}

fn dgp_kind(token: &str) -> Result<(DgpKind, &'static str), String> {
    match token.to_ascii_lowercase().as_str() {
        "m1" => Ok((DgpKind::M1Logistic, "m1")),
        "m2" => Ok((DgpKind::M2Probit, "m2")),
        "aa" => Ok((DgpKind::Alopecia, "aa")),
        other => Err(format!("unknown dgp '{other}' (expected m1, m2, or aa)")),
    }
}

fn model_choice(token: &str) -> Result<(ModelChoice, &'static str), String> {
    match token.to_ascii_lowercase().as_str() {
        "a0" => Ok((ModelChoice::A0, "a0")),
        "a1" => Ok((ModelChoice::A1, "a1")),
        "a2" => Ok((ModelChoice::A2, "a2")),
        other => Err(format!("unknown model '{other}' (expected a0, a1, or a2)")),
    }
}

fn scheme_kind(token: &str) -> Result<(Scheme, &'static str), String> {
    match token.to_ascii_lowercase().as_str() {
        "cr" => Ok((Scheme::Complete, "cr")),
        "strpb" => Ok((Scheme::StratifiedBlocks, "strpb")),
        "ps" => Ok((Scheme::PocockSimon, "ps")),
        "hh" => Ok((Scheme::HuHu, "hh")),
        other => Err(format!(
            "unknown scheme '{other}' (expected cr, strpb, ps, or hh)"
        )),
    }
}

fn test_variant(token: &str) -> Result<(TestVariant, &'static str), String> {
    match token.to_ascii_lowercase().as_str() {
        "conv" | "conventional" => Ok((TestVariant::Conventional, "conv")),
        "robust" => Ok((TestVariant::Robust, "robust")),
        other => Err(format!("unknown test '{other}' (expected conv or robust)")),
    }
}

fn metric_kind(token: &str) -> Result<(Metric, &'static str), String> {
    match token.to_ascii_lowercase().as_str() {
        "logrr" => Ok((Metric::LogRr, "logrr")),
        "lor" => Ok((Metric::LogOr, "lor")),
        "ate" => Ok((Metric::Ate, "ate")),
        other => Err(format!(
            "unknown metric '{other}' (expected logrr, lor, or ate)"
        )),
    }
}

fn selection_rule(token: &str) -> Result<SelectionRule, String> {
    match token.to_ascii_lowercase().as_str() {
        "maxw" | "maxwald" => Ok(SelectionRule::MaxWald),
        "maxd" | "maxdelta" | "maxeffect" => Ok(SelectionRule::MaxEffect),
        other => Err(format!(
            "unknown selection rule '{other}' (expected maxw or maxd)"
        )),
    }
}

impl CellSettings {
    /// Fill gaps with the stock design and validate everything.
    pub fn resolve(&self) -> Result<ResolvedCell, String> {
        let (dgp_k, dgp_token) = dgp_kind(self.dgp.as_deref().unwrap_or("m1"))?;
        let (model, model_token) = model_choice(self.model.as_deref().unwrap_or("a0"))?;
        let (scheme, scheme_token) = scheme_kind(self.scheme.as_deref().unwrap_or("strpb"))?;
        let (test, test_token) = test_variant(self.test.as_deref().unwrap_or("robust"))?;
        let (metric, metric_token) = metric_kind(self.metric.as_deref().unwrap_or("logrr"))?;
        let iota1 = self.iota1.unwrap_or(0.0);
        let iota2 = self.iota2.unwrap_or(0.0);

        let dgp = DgpSpec::new(dgp_k, vec![iota1, iota2]).map_err(|e| e.to_string())?;
        let mut scheme_spec = SchemeSpec::new(scheme);
        if let Some(b) = self.block {
            scheme_spec.block_size = Some(b);
        }
        if let Some(p) = self.coin {
            scheme_spec.biased_coin_p = p;
        }
        let mut config = TrialConfig::new(scheme_spec, model, metric, test);
        if let Some(n) = self.n1 {
            config.n1 = n;
        }
        if let Some(n) = self.n2 {
            config.n2 = n;
        }
        if let Some(b) = self.bootstrap {
            config.bootstrap_b = b;
        }
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        if let Some(rule) = &self.selection {
            config.selection = selection_rule(rule)?;
        }
        config.validate().map_err(|e| e.to_string())?;

        Ok(ResolvedCell {
            dgp_token,
            model_token,
            scheme_token,
            test_token,
            metric_token,
            iota1,
            iota2,
            reps: self.reps.unwrap_or(2000),
            dgp,
            config,
        })
    }
}

/// Per-cell master seed: a stable hash of the cell's identity folded into
/// the base seed. The test variant is deliberately excluded, so the
/// conventional and robust versions of a cell share every random draw and
/// their rates differ only through the variance estimate (common random
/// numbers).
pub fn cell_seed(base: u64, cell: &ResolvedCell) -> u64 {
    let ident = format!(
        "{}|{}|{}|{}|{}|{}",
        cell.dgp_token, cell.model_token, cell.scheme_token, cell.metric_token, cell.iota1,
        cell.iota2
    );
    let mut h: u64 = 0xcbf29ce484222325;
    for b in ident.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ base.wrapping_mul(0x9e3779b97f4a7c15)
}
