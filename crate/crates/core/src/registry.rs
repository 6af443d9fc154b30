use std::collections::BTreeMap;

/// Name-keyed table of strategy factories.
///
/// Lookups are by exact name; registering an existing name replaces it.
pub struct Registry<F> {
    entries: BTreeMap<String, F>,
}

impl<F> Registry<F> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, factory: F) -> &mut Self {
        self.entries.insert(name.into(), factory);
        self
    }

    pub fn get(&self, name: &str) -> Option<&F> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl<F> Default for Registry<F> {
    fn default() -> Self {
        Self::new()
    }
}
