use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mixers::{DoremiMixer, Mixer, OdmMixer, RandomMixer, StaticMixer};
use crate::selectors::{
    DeltaLossSelector, InfluenceSelector, KnnSelector, LossSelector, ProbeSelector, RandomSelector,
    Selector, TsdsSelector,
};
use crate::types::ComponentParams;
use crate::weighters::{LossWeighter, Weighter};

pub type SelectorFactory = Arc<dyn Fn(&ComponentParams) -> Result<Box<dyn Selector>> + Send + Sync>;
pub type MixerFactory = Arc<dyn Fn(&ComponentParams) -> Result<Box<dyn Mixer>> + Send + Sync>;
pub type WeighterFactory = Arc<dyn Fn(&ComponentParams) -> Result<Box<dyn Weighter>> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentKind {
    Selector,
    Mixer,
    Weighter,
}

impl ComponentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ComponentKind::Selector => "selector",
            ComponentKind::Mixer => "mixer",
            ComponentKind::Weighter => "weighter",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone)]
pub enum Factory {
    Selector(SelectorFactory),
    Mixer(MixerFactory),
    Weighter(WeighterFactory),
}

impl Factory {
    pub fn kind(&self) -> ComponentKind {
        match self {
            Factory::Selector(_) => ComponentKind::Selector,
            Factory::Mixer(_) => ComponentKind::Mixer,
            Factory::Weighter(_) => ComponentKind::Weighter,
        }
    }
}

pub enum Component {
    Selector(Box<dyn Selector>),
    Mixer(Box<dyn Mixer>),
    Weighter(Box<dyn Weighter>),
}

/// String-keyed component factories, one namespace per kind.
#[derive(Clone, Default)]
pub struct ComponentRegistry {
    entries: BTreeMap<(ComponentKind, String), Factory>,
}

impl fmt::Debug for ComponentRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.entries.keys().map(|(k, n)| format!("{k}:{n}")))
            .finish()
    }
}

impl ComponentRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        register_builtins(&mut r).expect("built-in names are unique");
        r
    }

    pub fn register(&mut self, name: &str, factory: Factory) -> Result<()> {
        let kind = factory.kind();
        if name.is_empty() {
            return Err(Error::BadParams(format!("{kind} name must be non-empty")));
        }
        let key = (kind, name.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateName {
                kind: kind.to_string(),
                name: name.to_string(),
            });
        }
        self.entries.insert(key, factory);
        Ok(())
    }

    pub fn register_selector<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&ComponentParams) -> Result<Box<dyn Selector>> + Send + Sync + 'static,
    {
        self.register(name, Factory::Selector(Arc::new(f)))
    }

    pub fn register_mixer<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&ComponentParams) -> Result<Box<dyn Mixer>> + Send + Sync + 'static,
    {
        self.register(name, Factory::Mixer(Arc::new(f)))
    }

    pub fn register_weighter<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(&ComponentParams) -> Result<Box<dyn Weighter>> + Send + Sync + 'static,
    {
        self.register(name, Factory::Weighter(Arc::new(f)))
    }

    pub fn contains(&self, kind: ComponentKind, name: &str) -> bool {
        self.entries.contains_key(&(kind, name.to_string()))
    }

    pub fn names(&self, kind: ComponentKind) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|(k, _)| *k == kind)
            .map(|(_, n)| n.as_str())
            .collect()
    }

    pub fn resolve(
        &self,
        kind: ComponentKind,
        name: &str,
        params: &ComponentParams,
    ) -> Result<Component> {
        let factory =
            self.entries
                .get(&(kind, name.to_string()))
                .ok_or_else(|| Error::UnknownComponent {
                    kind: kind.to_string(),
                    name: name.to_string(),
                })?;
        Ok(match factory {
            Factory::Selector(f) => Component::Selector(f(params)?),
            Factory::Mixer(f) => Component::Mixer(f(params)?),
            Factory::Weighter(f) => Component::Weighter(f(params)?),
        })
    }

    pub fn resolve_selector(
        &self,
        name: &str,
        params: &ComponentParams,
    ) -> Result<Box<dyn Selector>> {
        match self.resolve(ComponentKind::Selector, name, params)? {
            Component::Selector(s) => Ok(s),
            _ => unreachable!("selector namespace holds selector factories"),
        }
    }

    pub fn resolve_mixer(&self, name: &str, params: &ComponentParams) -> Result<Box<dyn Mixer>> {
        match self.resolve(ComponentKind::Mixer, name, params)? {
            Component::Mixer(m) => Ok(m),
            _ => unreachable!("mixer namespace holds mixer factories"),
        }
    }

    pub fn resolve_weighter(
        &self,
        name: &str,
        params: &ComponentParams,
    ) -> Result<Box<dyn Weighter>> {
        match self.resolve(ComponentKind::Weighter, name, params)? {
            Component::Weighter(w) => Ok(w),
            _ => unreachable!("weighter namespace holds weighter factories"),
        }
    }
}

/// Registers every built-in component.
pub fn register_builtins(r: &mut ComponentRegistry) -> Result<()> {
    r.register_selector("loss", |p| Ok(Box::new(LossSelector::from_params(p)?)))?;
    r.register_selector("delta_loss", |p| {
        Ok(Box::new(DeltaLossSelector::from_params(p)?))
    })?;
    r.register_selector("less", |p| Ok(Box::new(InfluenceSelector::from_params(p)?)))?;
    r.register_selector("nice", |p| Ok(Box::new(ProbeSelector::from_params(p)?)))?;
    r.register_selector("near", |p| Ok(Box::new(KnnSelector::from_params(p)?)))?;
    r.register_selector("tsds", |p| Ok(Box::new(TsdsSelector::from_params(p)?)))?;
    r.register_selector("random", |p| Ok(Box::new(RandomSelector::from_params(p)?)))?;
    r.register_mixer("static", |p| Ok(Box::new(StaticMixer::from_params(p)?)))?;
    r.register_mixer("random", |p| Ok(Box::new(RandomMixer::from_params(p)?)))?;
    r.register_mixer("doremi", |p| Ok(Box::new(DoremiMixer::from_params(p)?)))?;
    r.register_mixer("odm", |p| Ok(Box::new(OdmMixer::from_params(p)?)))?;
    r.register_weighter("loss", |p| Ok(Box::new(LossWeighter::from_params(p)?)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        let r = ComponentRegistry::with_builtins();
        assert_eq!(
            r.names(ComponentKind::Selector),
            vec![
                "delta_loss",
                "less",
                "loss",
                "near",
                "nice",
                "random",
                "tsds"
            ]
        );
        assert_eq!(
            r.names(ComponentKind::Mixer),
            vec!["doremi", "odm", "random", "static"]
        );
        assert_eq!(r.names(ComponentKind::Weighter), vec!["loss"]);
    }

    #[test]
    fn resolves_by_name() {
        let r = ComponentRegistry::with_builtins();
        let d = ComponentParams::new();
        assert_eq!(r.resolve_selector("less", &d).unwrap().name(), "less");
        assert_eq!(r.resolve_mixer("doremi", &d).unwrap().name(), "doremi");
        assert_eq!(r.resolve_weighter("loss", &d).unwrap().name(), "loss");
    }

    #[test]
    fn unknown_and_duplicate_names() {
        let mut r = ComponentRegistry::with_builtins();
        assert!(matches!(
            r.resolve_selector("bogus", &ComponentParams::new()),
            Err(Error::UnknownComponent { .. })
        ));
        assert!(matches!(
            r.register_mixer("odm", |p| Ok(Box::new(OdmMixer::from_params(p)?))),
            Err(Error::DuplicateName { .. })
        ));
        // same name under another kind is a different key
        r.register_weighter("odm", |p| Ok(Box::new(LossWeighter::from_params(p)?)))
            .unwrap();
        assert!(r
            .register_selector("", |p| Ok(Box::new(LossSelector::from_params(p)?)))
            .is_err());
    }

    #[test]
    fn params_reach_the_factory() {
        let r = ComponentRegistry::with_builtins();
        let p = ComponentParams::new().with_f64("k", 3.0);
        assert_eq!(
            r.resolve_selector("near", &p).unwrap().describe(),
            "near(k=3)"
        );
        assert!(r
            .resolve_selector("near", &ComponentParams::new().with_f64("kk", 3.0))
            .is_err());
    }
}
