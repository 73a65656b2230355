//! Parameter resolution shared by the CLI and the service: calibration,
//! then a performance profile, then explicit per-request settings.

use em_core::catalog::{apply_profile, calibrate, Calibration, CatalogError, CatalogStore, PerformanceProfile};
use em_core::kernel::ParamError;
use em_core::{EntityPair, ParameterTree};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("invalid setting for {path}: {source}")]
    Setting { path: String, source: ParamError },
}

#[derive(Debug, Clone, Default)]
pub struct ParamRequest<'a> {
    /// Catalog profile to load; when absent the sample's signature decides.
    pub hint: Option<&'a str>,
    pub optimize: Option<PerformanceProfile>,
    /// `(path, raw value)` pairs applied last, in order.
    pub settings: Vec<(String, String)>,
    pub sample: Option<&'a [EntityPair]>,
}

pub fn resolve(store: &CatalogStore, defaults: &ParameterTree, req: &ParamRequest<'_>) -> Result<Calibration, ResolveError> {
    let mut cal = calibrate(store, defaults, req.hint, req.sample)?;
    if let Some(profile) = req.optimize {
        cal.tree = apply_profile(&cal.tree, profile)?;
    }
    for (path, raw) in &req.settings {
        cal.tree = cal.tree.set_from_str(path, raw).map_err(|source| ResolveError::Setting {
            path: path.clone(),
            source,
        })?;
    }
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use em_core::catalog::CatalogRecord;
    use em_core::kernel::params;

    #[test]
    fn explicit_settings_override_profile_and_catalog() {
        let dir = tempfile::tempdir().unwrap();
        let store = CatalogStore::new(dir.path());
        let mut rec = CatalogRecord::new("p");
        rec.overrides.insert(params::MATCH_COT.into(), false.into());
        store.save(&rec).unwrap();
        let defaults = ParameterTree::defaults();

        let req = ParamRequest {
            hint: Some("p"),
            optimize: Some(PerformanceProfile::Accuracy),
            settings: vec![(params::MATCH_BROWSE.into(), "off".into())],
            sample: None,
        };
        let cal = resolve(&store, &defaults, &req).unwrap();
        assert_eq!(cal.chosen_profile, "p");
        assert!(cal.tree.toggle(params::MATCH_COT).unwrap());
        assert!(!cal.tree.toggle(params::MATCH_BROWSE).unwrap());

        let bad = ParamRequest {
            settings: vec![(params::MATCH_COT.into(), "maybe".into())],
            ..ParamRequest::default()
        };
        assert!(matches!(resolve(&store, &defaults, &bad), Err(ResolveError::Setting { .. })));
        let missing = ParamRequest {
            hint: Some("nope"),
            ..ParamRequest::default()
        };
        assert!(matches!(
            resolve(&store, &defaults, &missing),
            Err(ResolveError::Catalog(CatalogError::ProfileNotFound(_)))
        ));
    }
}
