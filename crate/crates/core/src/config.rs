//! Experiment configuration: a small sectioned key-value format with hard
//! errors on unknown keys, full default filling, and a canonical echo that
//! is a parse/echo fixed point (the echo is also what gets hashed).

use std::collections::BTreeSet;

use crate::effective::SolveGrid;
use crate::environment::{EnvKind, EnvParams, SigmaKind};
use crate::experiments::{ExperimentConfig, ExperimentKind};
use crate::io::format_float;
use crate::{HjError, Result};

pub fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        env: EnvParams {
            d: 2,
            q: 2.0,
            lambda: 4.0,
            kind: EnvKind::PoissonBumps {
                intensity: 0.8,
                bump_radius: 0.35,
                amp: 0.5,
                vmax: 1.0,
                coef_amp: 0.3,
            },
            sigma: SigmaKind::Zero,
            constrained: false,
            seed: 0,
            replica: 0,
        },
        n_replicas: 8,
        seed: 0,
        threads: 1,
        grid: SolveGrid { h: 0.25, margin: 4.0 },
        domain_radius: 12.0,
        mu: 1.0,
        mu_min: 0.25,
        mu_max: 4.0,
        r_list: vec![8.0, 16.0, 32.0],
        proxy_r_list: vec![32.0, 48.0],
        t_list: vec![2.0, 4.0],
        theta_list: vec![0.05, 0.1, 0.2],
        sigma_soft: 0.5,
        p_list: vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]],
        hbar_tol: 0.02,
        n_directions: 16,
        delta_list: vec![0.2, 0.1, 0.05, 0.025],
        r_cap: 48.0,
        eps_list: vec![0.2, 0.1, 0.05],
        t_final: 0.5,
        g_amp: 0.6,
        g_width: 1.0,
        n_polygons: 50,
        r_factors: vec![2.0, 4.0, 8.0],
        n_bootstrap: 200,
        residual_tol_scale: 1e-6,
        max_sweeps: 100_000,
    }
}

struct Item {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn tokenize(text: &str) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    let mut section = String::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(name) = s.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| HjError::Config(format!("line {line}: unterminated section header")))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| HjError::Config(format!("line {line}: expected `key = value`")))?;
        if section.is_empty() {
            return Err(HjError::Config(format!("line {line}: key before any [section]")));
        }
        items.push(Item {
            section: section.clone(),
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            line,
        });
    }
    Ok(items)
}

fn parse_f64(it: &Item) -> Result<f64> {
    it.value
        .parse::<f64>()
        .map_err(|_| HjError::Config(format!("line {}: `{}` is not a number", it.line, it.value)))
}

fn parse_usize(it: &Item) -> Result<usize> {
    it.value
        .parse::<usize>()
        .map_err(|_| HjError::Config(format!("line {}: `{}` is not a count", it.line, it.value)))
}

fn parse_u64(it: &Item) -> Result<u64> {
    it.value
        .parse::<u64>()
        .map_err(|_| HjError::Config(format!("line {}: `{}` is not a seed", it.line, it.value)))
}

fn parse_bool(it: &Item) -> Result<bool> {
    match it.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(HjError::Config(format!(
            "line {}: `{}` is not true/false",
            it.line, it.value
        ))),
    }
}

fn parse_list(it: &Item) -> Result<Vec<f64>> {
    it.value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                HjError::Config(format!("line {}: `{}` is not a number list", it.line, it.value))
            })
        })
        .collect()
}

fn parse_vec_list(it: &Item) -> Result<Vec<[f64; 2]>> {
    it.value
        .split(';')
        .map(|pair| {
            let parts: Vec<&str> = pair.trim().split_whitespace().collect();
            if parts.is_empty() || parts.len() > 2 {
                return Err(HjError::Config(format!(
                    "line {}: vector `{}` must be 1 or 2 components",
                    it.line,
                    pair.trim()
                )));
            }
            let x = parts[0].parse::<f64>().map_err(|_| {
                HjError::Config(format!("line {}: bad vector component `{}`", it.line, parts[0]))
            })?;
            let y = if parts.len() == 2 {
                parts[1].parse::<f64>().map_err(|_| {
                    HjError::Config(format!("line {}: bad vector component `{}`", it.line, parts[1]))
                })?
            } else {
                0.0
            };
            Ok([x, y])
        })
        .collect()
}

/// Parses config text: defaults filled, unknown keys rejected, all semantic
/// violations listed together.
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig> {
    let items = tokenize(text)?;
    let kind_item = items
        .iter()
        .find(|it| it.section == "experiment" && it.key == "kind")
        .ok_or_else(|| HjError::Config("missing required key [experiment] kind".into()))?;
    let kind = ExperimentKind::parse(&kind_item.value).ok_or_else(|| {
        HjError::Config(format!(
            "line {}: unknown experiment kind `{}`",
            kind_item.line, kind_item.value
        ))
    })?;
    let mut cfg = default_config(kind);

    // environment sub-fields arrive before assembly
    let mut env_kind = "poisson_bumps".to_string();
    let mut sigma_kind = "zero".to_string();
    let mut intensity = 0.8;
    let mut bump_radius = 0.35;
    let mut amp = 0.5;
    let mut vmax = 1.0;
    let mut coef_amp = 0.3;
    let mut cell_size = 0.4;
    let mut smoothing_radius = 0.15;
    let mut a_lo = 0.8;
    let mut a_hi = 1.25;
    let mut v0 = 0.5;
    let mut period = 1.0;
    let mut coef = 1.0;
    let mut sigma_a0 = 0.5;
    let mut sigma_base = 0.3;
    let mut sigma_amp = 0.3;
    let mut sigma_bump_radius = 0.35;
    let mut sigma_intensity = 0.5;

    let mut seen = BTreeSet::new();
    for it in &items {
        let full = format!("{}.{}", it.section, it.key);
        if !seen.insert(full.clone()) {
            return Err(HjError::Config(format!("line {}: duplicate key `{full}`", it.line)));
        }
        match (it.section.as_str(), it.key.as_str()) {
            ("experiment", "kind") => {}
            ("experiment", "seed") => cfg.seed = parse_u64(it)?,
            ("experiment", "replicas") => cfg.n_replicas = parse_usize(it)?,
            ("environment", "d") => cfg.env.d = parse_usize(it)?,
            ("environment", "q") => cfg.env.q = parse_f64(it)?,
            ("environment", "lambda") => cfg.env.lambda = parse_f64(it)?,
            ("environment", "kind") => env_kind = it.value.clone(),
            ("environment", "constrained") => cfg.env.constrained = parse_bool(it)?,
            ("environment", "intensity") => intensity = parse_f64(it)?,
            ("environment", "bump_radius") => bump_radius = parse_f64(it)?,
            ("environment", "amp") => amp = parse_f64(it)?,
            ("environment", "vmax") => vmax = parse_f64(it)?,
            ("environment", "coef_amp") => coef_amp = parse_f64(it)?,
            ("environment", "cell_size") => cell_size = parse_f64(it)?,
            ("environment", "smoothing_radius") => smoothing_radius = parse_f64(it)?,
            ("environment", "a_lo") => a_lo = parse_f64(it)?,
            ("environment", "a_hi") => a_hi = parse_f64(it)?,
            ("environment", "v0") => v0 = parse_f64(it)?,
            ("environment", "period") => period = parse_f64(it)?,
            ("environment", "coef") => coef = parse_f64(it)?,
            ("environment", "sigma") => sigma_kind = it.value.clone(),
            ("environment", "sigma_a0") => sigma_a0 = parse_f64(it)?,
            ("environment", "sigma_base") => sigma_base = parse_f64(it)?,
            ("environment", "sigma_amp") => sigma_amp = parse_f64(it)?,
            ("environment", "sigma_bump_radius") => sigma_bump_radius = parse_f64(it)?,
            ("environment", "sigma_intensity") => sigma_intensity = parse_f64(it)?,
            ("grid", "h") => cfg.grid.h = parse_f64(it)?,
            ("grid", "margin") => cfg.grid.margin = parse_f64(it)?,
            ("grid", "domain_radius") => cfg.domain_radius = parse_f64(it)?,
            ("solver", "residual_tol_scale") => cfg.residual_tol_scale = parse_f64(it)?,
            ("solver", "max_sweeps") => cfg.max_sweeps = parse_usize(it)?,
            ("metric", "mu") => cfg.mu = parse_f64(it)?,
            ("metric", "mu_min") => cfg.mu_min = parse_f64(it)?,
            ("metric", "mu_max") => cfg.mu_max = parse_f64(it)?,
            ("metric", "r_list") => cfg.r_list = parse_list(it)?,
            ("metric", "proxy_r_list") => cfg.proxy_r_list = parse_list(it)?,
            ("metric", "t_list") => cfg.t_list = parse_list(it)?,
            ("metric", "theta_list") => cfg.theta_list = parse_list(it)?,
            ("metric", "sigma_soft") => cfg.sigma_soft = parse_f64(it)?,
            ("hbar", "p_list") => cfg.p_list = parse_vec_list(it)?,
            ("hbar", "tol") => cfg.hbar_tol = parse_f64(it)?,
            ("hbar", "n_directions") => cfg.n_directions = parse_usize(it)?,
            ("cell", "delta_list") => cfg.delta_list = parse_list(it)?,
            ("cell", "r_cap") => cfg.r_cap = parse_f64(it)?,
            ("evolve", "eps_list") => cfg.eps_list = parse_list(it)?,
            ("evolve", "t_final") => cfg.t_final = parse_f64(it)?,
            ("evolve", "g_amp") => cfg.g_amp = parse_f64(it)?,
            ("evolve", "g_width") => cfg.g_width = parse_f64(it)?,
            ("straszewicz", "n_polygons") => cfg.n_polygons = parse_usize(it)?,
            ("straszewicz", "r_factors") => cfg.r_factors = parse_list(it)?,
            ("fit", "n_bootstrap") => cfg.n_bootstrap = parse_usize(it)?,
            _ => {
                return Err(HjError::Config(format!(
                    "line {}: unknown key `{}` in section [{}]",
                    it.line, it.key, it.section
                )));
            }
        }
    }

    cfg.env.kind = match env_kind.as_str() {
        "deterministic" => EnvKind::Deterministic { coef },
        "periodic" => EnvKind::Periodic { v0, period },
        "poisson_bumps" => EnvKind::PoissonBumps { intensity, bump_radius, amp, vmax, coef_amp },
        "checkerboard" => EnvKind::Checkerboard { cell_size, smoothing_radius, a_lo, a_hi, vmax },
        other => {
            return Err(HjError::Config(format!("unknown environment kind `{other}`")));
        }
    };
    cfg.env.sigma = match sigma_kind.as_str() {
        "zero" => SigmaKind::Zero,
        "constant_isotropic" => SigmaKind::ConstantIsotropic { a0: sigma_a0 },
        "bump_modulated" => SigmaKind::BumpModulated {
            base: sigma_base,
            amp: sigma_amp,
            bump_radius: sigma_bump_radius,
            intensity: sigma_intensity,
        },
        other => {
            return Err(HjError::Config(format!("unknown sigma kind `{other}`")));
        }
    };
    cfg.env.seed = cfg.seed;

    let mut violations = Vec::new();
    if let Err(e) = cfg.env.validate() {
        violations.push(e.to_string());
    }
    if cfg.n_replicas == 0 {
        violations.push("replicas must be >= 1".into());
    }
    if !(cfg.grid.h > 0.0) {
        violations.push("grid h must be > 0".into());
    }
    if cfg.r_list.is_empty() || cfg.r_list.windows(2).any(|w| w[0] >= w[1]) {
        violations.push("metric r_list must be nonempty and strictly increasing".into());
    }
    if cfg.delta_list.is_empty() {
        violations.push("cell delta_list must be nonempty".into());
    }
    if cfg.eps_list.is_empty() {
        violations.push("evolve eps_list must be nonempty".into());
    }
    if !(cfg.mu > 0.0 && cfg.mu <= cfg.mu_max) {
        violations.push(format!("mu = {} outside (0, mu_max]", cfg.mu));
    }
    if !violations.is_empty() {
        return Err(HjError::Config(format!(
            "semantic validation failed:\n  - {}",
            violations.join("\n  - ")
        )));
    }
    Ok(cfg)
}

pub fn parse_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HjError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config_text(&text)
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format_float(*x)).collect::<Vec<_>>().join(", ")
}

fn fmt_vec_list(ps: &[[f64; 2]], d: usize) -> String {
    ps.iter()
        .map(|p| {
            if d == 1 {
                format_float(p[0])
            } else {
                format!("{} {}", format_float(p[0]), format_float(p[1]))
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Canonical serialization: fixed section and key order, full defaults.
/// `parse(echo(cfg))` reproduces `cfg` and `echo` is idempotent.
pub fn echo_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let kv = |s: &mut String, k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    out.push_str("[experiment]\n");
    kv(&mut out, "kind", cfg.kind.name().to_string());
    kv(&mut out, "seed", cfg.seed.to_string());
    kv(&mut out, "replicas", cfg.n_replicas.to_string());

    out.push_str("\n[environment]\n");
    kv(&mut out, "d", cfg.env.d.to_string());
    kv(&mut out, "q", format_float(cfg.env.q));
    kv(&mut out, "lambda", format_float(cfg.env.lambda));
    kv(&mut out, "constrained", cfg.env.constrained.to_string());
    match &cfg.env.kind {
        EnvKind::Deterministic { coef } => {
            kv(&mut out, "kind", "deterministic".into());
            kv(&mut out, "coef", format_float(*coef));
        }
        EnvKind::Periodic { v0, period } => {
            kv(&mut out, "kind", "periodic".into());
            kv(&mut out, "v0", format_float(*v0));
            kv(&mut out, "period", format_float(*period));
        }
        EnvKind::PoissonBumps { intensity, bump_radius, amp, vmax, coef_amp } => {
            kv(&mut out, "kind", "poisson_bumps".into());
            kv(&mut out, "intensity", format_float(*intensity));
            kv(&mut out, "bump_radius", format_float(*bump_radius));
            kv(&mut out, "amp", format_float(*amp));
            kv(&mut out, "vmax", format_float(*vmax));
            kv(&mut out, "coef_amp", format_float(*coef_amp));
        }
        EnvKind::Checkerboard { cell_size, smoothing_radius, a_lo, a_hi, vmax } => {
            kv(&mut out, "kind", "checkerboard".into());
            kv(&mut out, "cell_size", format_float(*cell_size));
            kv(&mut out, "smoothing_radius", format_float(*smoothing_radius));
            kv(&mut out, "a_lo", format_float(*a_lo));
            kv(&mut out, "a_hi", format_float(*a_hi));
            kv(&mut out, "vmax", format_float(*vmax));
        }
    }
    match &cfg.env.sigma {
        SigmaKind::Zero => kv(&mut out, "sigma", "zero".into()),
        SigmaKind::ConstantIsotropic { a0 } => {
            kv(&mut out, "sigma", "constant_isotropic".into());
            kv(&mut out, "sigma_a0", format_float(*a0));
        }
        SigmaKind::BumpModulated { base, amp, bump_radius, intensity } => {
            kv(&mut out, "sigma", "bump_modulated".into());
            kv(&mut out, "sigma_base", format_float(*base));
            kv(&mut out, "sigma_amp", format_float(*amp));
            kv(&mut out, "sigma_bump_radius", format_float(*bump_radius));
            kv(&mut out, "sigma_intensity", format_float(*intensity));
        }
    }

    out.push_str("\n[grid]\n");
    kv(&mut out, "h", format_float(cfg.grid.h));
    kv(&mut out, "margin", format_float(cfg.grid.margin));
    kv(&mut out, "domain_radius", format_float(cfg.domain_radius));

    out.push_str("\n[solver]\n");
    kv(&mut out, "residual_tol_scale", format_float(cfg.residual_tol_scale));
    kv(&mut out, "max_sweeps", cfg.max_sweeps.to_string());

    out.push_str("\n[metric]\n");
    kv(&mut out, "mu", format_float(cfg.mu));
    kv(&mut out, "mu_min", format_float(cfg.mu_min));
    kv(&mut out, "mu_max", format_float(cfg.mu_max));
    kv(&mut out, "r_list", fmt_list(&cfg.r_list));
    kv(&mut out, "proxy_r_list", fmt_list(&cfg.proxy_r_list));
    kv(&mut out, "t_list", fmt_list(&cfg.t_list));
    kv(&mut out, "theta_list", fmt_list(&cfg.theta_list));
    kv(&mut out, "sigma_soft", format_float(cfg.sigma_soft));

    out.push_str("\n[hbar]\n");
    kv(&mut out, "p_list", fmt_vec_list(&cfg.p_list, cfg.env.d));
    kv(&mut out, "tol", format_float(cfg.hbar_tol));
    kv(&mut out, "n_directions", cfg.n_directions.to_string());

    out.push_str("\n[cell]\n");
    kv(&mut out, "delta_list", fmt_list(&cfg.delta_list));
    kv(&mut out, "r_cap", format_float(cfg.r_cap));

    out.push_str("\n[evolve]\n");
    kv(&mut out, "eps_list", fmt_list(&cfg.eps_list));
    kv(&mut out, "t_final", format_float(cfg.t_final));
    kv(&mut out, "g_amp", format_float(cfg.g_amp));
    kv(&mut out, "g_width", format_float(cfg.g_width));

    out.push_str("\n[straszewicz]\n");
    kv(&mut out, "n_polygons", cfg.n_polygons.to_string());
    kv(&mut out, "r_factors", fmt_list(&cfg.r_factors));

    out.push_str("\n[fit]\n");
    kv(&mut out, "n_bootstrap", cfg.n_bootstrap.to_string());
    out
}
