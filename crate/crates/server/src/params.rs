//! `SimParams` overrides from the environment.
//!
//! | variable | field |
//! |---|---|
//! | `TROLLEY_DT` | `dt` |
//! | `TROLLEY_A_AUTO` | `a_auto` |
//! | `TROLLEY_V_MAX` | `v_max` |
//! | `TROLLEY_OMEGA_MAX` | `omega_max` |
//! | `TROLLEY_THETA_MAX` | `theta_max` |
//! | `TROLLEY_VEHICLE_RADIUS` | `vehicle_radius` |
//! | `TROLLEY_T_MAX_TICKS` | `t_max_ticks` |

use thiserror::Error;
use trolley_core::sim::SimParams;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("{var}: cannot parse `{value}`")]
    Parse { var: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

pub fn params_from_env() -> Result<SimParams, ParamsError> {
    params_from_vars(std::env::vars())
}

pub fn params_from_vars(vars: impl IntoIterator<Item = (String, String)>) -> Result<SimParams, ParamsError> {
    let mut p = SimParams::default();
    for (var, value) in vars {
        let slot = match var.as_str() {
            "TROLLEY_DT" => &mut p.dt,
            "TROLLEY_A_AUTO" => &mut p.a_auto,
            "TROLLEY_V_MAX" => &mut p.v_max,
            "TROLLEY_OMEGA_MAX" => &mut p.omega_max,
            "TROLLEY_THETA_MAX" => &mut p.theta_max,
            "TROLLEY_VEHICLE_RADIUS" => &mut p.vehicle_radius,
            "TROLLEY_T_MAX_TICKS" => {
                p.t_max_ticks = value.trim().parse().map_err(|_| ParamsError::Parse { var, value })?;
                continue;
            }
            _ => continue,
        };
        *slot = value.trim().parse().map_err(|_| ParamsError::Parse { var, value })?;
    }
    p.check().map_err(|e| ParamsError::Invalid(e.to_string()))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_without_overrides() {
        assert_eq!(params_from_vars(vars(&[("HOME", "/x")])), Ok(SimParams::default()));
    }

    #[test]
    fn overrides_apply() {
        let p = params_from_vars(vars(&[("TROLLEY_V_MAX", "12.5"), ("TROLLEY_T_MAX_TICKS", "600")])).unwrap();
        assert_eq!(p.v_max, 12.5);
        assert_eq!(p.t_max_ticks, 600);
    }

    #[test]
    fn rejects_garbage_and_invalid() {
        assert!(matches!(params_from_vars(vars(&[("TROLLEY_DT", "fast")])), Err(ParamsError::Parse { .. })));
        assert!(matches!(params_from_vars(vars(&[("TROLLEY_DT", "-1")])), Err(ParamsError::Invalid(_))));
    }
}
