//! Construction of library objects from a validated configuration, with
//! explicit default resolution so the echoed configuration is complete.

use bvflow_core::bv::BvParams;
use bvflow_core::dissipation::DissipationFunction;
use bvflow_core::flow::{SolverOptions, TimeGrid};
use bvflow_core::systems::{make_example, BuiltinSystem, EvolutionSystem, MetricStructure};
use bvflow_core::transition::PathOptimizerOptions;

use crate::config::{Config, ConfigError};

type CfgResult<T> = Result<T, ConfigError>;

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

pub struct Setup {
    pub system: EvolutionSystem,
    pub initial_state: Vec<f64>,
    pub grid: TimeGrid,
    pub solver: SolverOptions,
}

pub fn build_metric(cfg: &mut Config) -> CfgResult<MetricStructure> {
    let kind = cfg.get("metric", "kind").unwrap_or("euclidean").to_string();
    cfg.set("metric", "kind", kind.clone());
    match kind.as_str() {
        "euclidean" => Ok(MetricStructure::Euclidean),
        "diagonal" => {
            let weights = cfg
                .get_vec("metric", "weights")?
                .ok_or_else(|| ConfigError("metric kind `diagonal` needs `weights`".into()))?;
            MetricStructure::diagonal(weights).map_err(|e| ConfigError(e.to_string()))
        }
        other => Err(ConfigError(format!(
            "unknown metric kind `{other}` (expected euclidean|diagonal)"
        ))),
    }
}

pub fn build_grid(cfg: &mut Config) -> CfgResult<TimeGrid> {
    if let Some(nodes) = cfg.get_vec("grid", "nodes")? {
        return TimeGrid::from_nodes(nodes).map_err(|e| ConfigError(e.to_string()));
    }
    let horizon = cfg.require_f64("grid", "T")?;
    let steps = cfg
        .get_usize("grid", "steps")?
        .ok_or_else(|| ConfigError("missing required key `steps` in section [grid]".into()))?;
    cfg.set("grid", "T", format!("{horizon}"));
    cfg.set("grid", "steps", format!("{steps}"));
    TimeGrid::uniform(horizon, steps).map_err(|e| ConfigError(e.to_string()))
}

pub fn build_solver(cfg: &mut Config) -> CfgResult<SolverOptions> {
    let defaults = SolverOptions::default();
    let opts = SolverOptions {
        tol: cfg.f64_or("solver", "tol", defaults.tol)?,
        max_iter: cfg.usize_or("solver", "max_iter", defaults.max_iter)?,
        multistart: cfg.usize_or("solver", "multistart", defaults.multistart)?,
        seed: cfg.get_u64("solver", "seed")?.unwrap_or(defaults.seed),
    };
    cfg.set("solver", "tol", format!("{:e}", opts.tol));
    cfg.set("solver", "max_iter", format!("{}", opts.max_iter));
    cfg.set("solver", "multistart", format!("{}", opts.multistart));
    cfg.set("solver", "seed", format!("{}", opts.seed));
    Ok(opts)
}

pub fn build_dissipation(cfg: &mut Config) -> CfgResult<DissipationFunction> {
    let family = cfg.require("dissipation", "family")?.to_string();
    let psi = match family.as_str() {
        "power" => {
            let p = cfg.require_f64("dissipation", "p")?;
            DissipationFunction::power(p)
        }
        "viscous_linear" => {
            let p = cfg.require_f64("dissipation", "p")?;
            let eps = cfg.require_f64("dissipation", "eps")?;
            DissipationFunction::viscous_linear(eps, p)
        }
        "capped_quadratic" => {
            let cap = cfg.require_f64("dissipation", "L")?;
            DissipationFunction::capped_quadratic(cap)
        }
        "pseudo_relativistic" => Ok(DissipationFunction::pseudo_relativistic()),
        "linear" => {
            let rate = cfg.require_f64("dissipation", "L")?;
            DissipationFunction::linear(rate)
        }
        other => {
            return Err(ConfigError(format!(
                "unknown dissipation family `{other}` \
                 (expected power|viscous_linear|capped_quadratic|pseudo_relativistic|linear)"
            )))
        }
    }
    .map_err(|e| ConfigError(e.to_string()))?;
    Ok(psi)
}

pub fn build_system(cfg: &mut Config, horizon: f64) -> CfgResult<(EvolutionSystem, Vec<f64>)> {
    let metric = build_metric(cfg)?;
    let name = cfg.require("system", "name")?.to_string();
    let (spec, default_u0) = match name.as_str() {
        "double_well_1d" => {
            let load_a = cfg.f64_or("system", "load_a", 0.0)?;
            let load_b = cfg.f64_or("system", "load_b", 0.0)?;
            cfg.set("system", "load_a", format!("{load_a}"));
            cfg.set("system", "load_b", format!("{load_b}"));
            cfg.set("system", "dimension", "1".into());
            (BuiltinSystem::DoubleWell1d { load_a, load_b }, vec![-1.0])
        }
        "allen_cahn_fd" => {
            let n = cfg
                .get_usize("system", "dimension")?
                .ok_or_else(|| ConfigError("allen_cahn_fd needs `dimension`".into()))?;
            let load_a = cfg.f64_or("system", "load_a", 0.0)?;
            let load_b = cfg.f64_or("system", "load_b", 0.0)?;
            cfg.set("system", "load_a", format!("{load_a}"));
            cfg.set("system", "load_b", format!("{load_b}"));
            (BuiltinSystem::AllenCahnFd { n, load_a, load_b }, vec![-1.0; n])
        }
        "quadratic" => {
            let n = cfg
                .get_usize("system", "dimension")?
                .ok_or_else(|| ConfigError("quadratic needs `dimension`".into()))?;
            let target0 = cfg.get_vec("system", "target0")?.unwrap_or_else(|| vec![0.0; n]);
            let target_rate = cfg.get_vec("system", "target_rate")?.unwrap_or_else(|| vec![0.0; n]);
            if target0.len() != n || target_rate.len() != n {
                return Err(ConfigError(
                    "quadratic target0/target_rate must match `dimension`".into(),
                ));
            }
            cfg.set("system", "target0", fmt_vec(&target0));
            cfg.set("system", "target_rate", fmt_vec(&target_rate));
            (BuiltinSystem::Quadratic { target0, target_rate }, vec![0.0; n])
        }
        "marginal_demo" => {
            cfg.set("system", "dimension", "1".into());
            (BuiltinSystem::MarginalDemo, vec![1.0])
        }
        other => {
            return Err(ConfigError(format!(
                "unknown system name `{other}` \
                 (expected double_well_1d|allen_cahn_fd|quadratic|marginal_demo)"
            )))
        }
    };
    let system = make_example(&spec, metric, horizon).map_err(|e| ConfigError(e.to_string()))?;
    let u0 = cfg.get_vec("system", "u0")?.unwrap_or(default_u0);
    if u0.len() != system.dimension() {
        return Err(ConfigError(format!(
            "u0 has length {}, system dimension is {}",
            u0.len(),
            system.dimension()
        )));
    }
    cfg.set("system", "u0", fmt_vec(&u0));
    Ok((system, u0))
}

pub fn build_setup(cfg: &mut Config) -> CfgResult<Setup> {
    let grid = build_grid(cfg)?;
    let (system, initial_state) = build_system(cfg, grid.horizon())?;
    let solver = build_solver(cfg)?;
    Ok(Setup { system, initial_state, grid, solver })
}

#[derive(Debug, Clone, Copy)]
pub struct BvConfig {
    pub params: BvParams,
    pub tol_stab: f64,
    pub eb_tol: f64,
    pub cap_l: Option<f64>,
    pub window_pad: usize,
    pub dyadic_depth: usize,
}

pub fn build_bv(cfg: &mut Config) -> CfgResult<BvConfig> {
    let defaults = BvParams::default();
    let out = BvConfig {
        params: BvParams {
            delta_jump: cfg.f64_or("bv", "delta_jump", defaults.delta_jump)?,
            abs_floor_rel: cfg.f64_or("bv", "abs_floor", defaults.abs_floor_rel)?,
        },
        tol_stab: cfg.f64_or("bv", "tol_stab", 0.05)?,
        eb_tol: cfg.f64_or("bv", "eb_tol", 0.05)?,
        cap_l: cfg.get_f64("bv", "cap_L")?,
        window_pad: cfg.usize_or("bv", "window_pad", 2)?,
        dyadic_depth: cfg.usize_or("bv", "dyadic_depth", 3)?,
    };
    cfg.set("bv", "delta_jump", format!("{}", out.params.delta_jump));
    cfg.set("bv", "abs_floor", format!("{:e}", out.params.abs_floor_rel));
    cfg.set("bv", "tol_stab", format!("{}", out.tol_stab));
    cfg.set("bv", "eb_tol", format!("{}", out.eb_tol));
    cfg.set("bv", "window_pad", format!("{}", out.window_pad));
    cfg.set("bv", "dyadic_depth", format!("{}", out.dyadic_depth));
    Ok(out)
}

pub fn build_path_opts(cfg: &mut Config) -> CfgResult<PathOptimizerOptions> {
    let defaults = PathOptimizerOptions::default();
    let opts = PathOptimizerOptions {
        segments: cfg.usize_or("transition", "segments", defaults.segments)?,
        starts: cfg.usize_or("transition", "starts", defaults.starts)?,
        ..defaults
    };
    cfg.set("transition", "segments", format!("{}", opts.segments));
    cfg.set("transition", "starts", format!("{}", opts.starts));
    Ok(opts)
}

/// Family law of a sweep: how the member dissipations approach the limit.
pub enum FamilyLaw {
    PToOne { ratio: f64, count: usize },
    EpsToZero { ratio: f64, count: usize, p: f64 },
    PToLimit { ratio: f64, count: usize, p_limit: f64 },
}

pub fn build_family_law(cfg: &mut Config) -> CfgResult<FamilyLaw> {
    let law = cfg.require("family", "law")?.to_string();
    let ratio = cfg.f64_or("family", "ratio", 0.5)?;
    let count = cfg.usize_or("family", "count", 6)?;
    cfg.set("family", "ratio", format!("{ratio}"));
    cfg.set("family", "count", format!("{count}"));
    match law.as_str() {
        "p_to_one" => Ok(FamilyLaw::PToOne { ratio, count }),
        "eps_to_zero" => {
            let p = cfg.f64_or("family", "p", 2.0)?;
            cfg.set("family", "p", format!("{p}"));
            Ok(FamilyLaw::EpsToZero { ratio, count, p })
        }
        "p_to_limit" => {
            let p_limit = cfg.f64_or("family", "p_limit", 2.0)?;
            cfg.set("family", "p_limit", format!("{p_limit}"));
            Ok(FamilyLaw::PToLimit { ratio, count, p_limit })
        }
        other => Err(ConfigError(format!(
            "unknown family law `{other}` (expected p_to_one|eps_to_zero|p_to_limit)"
        ))),
    }
}
