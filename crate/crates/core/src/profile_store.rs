//! User classes, users, rights and personal aliases.
//!
//! Rights belong to classes only: a user may do exactly what their class
//! may do. Each user may give personal names to data or actions; an alias
//! always points at a canonical name, never at another alias.
//!
//! Profiles are loaded from one JSON document:
//!
//! ```json
//! {
//!   "classes": [
//!     {"class_id": "airline", "task_model_id": "airline",
//!      "rights": ["flight.read", "flight.update"]}
//!   ],
//!   "users": [
//!     {"user_id": "alice", "class_id": "airline",
//!      "preferences": {"terminal": "pc"}, "aliases": {"shuttle": "AF123"}}
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_id: String,
    pub task_model_id: String,
    #[serde(default)]
    pub rights: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub class_id: String,
    #[serde(default)]
    pub preferences: BTreeMap<String, String>,
    /// personal name → canonical name
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileDocument {
    #[serde(default)]
    pub classes: Vec<ClassProfile>,
    #[serde(default)]
    pub users: Vec<UserProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allowed(self) -> bool {
        self == Decision::Allow
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("alias {alias} -> {target} would chain through another alias")]
    AliasChain { alias: String, target: String },
    #[error("profile file: {0}")]
    Parse(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Default)]
struct Inner {
    classes: BTreeMap<String, ClassProfile>,
    users: BTreeMap<String, UserProfile>,
}

/// Thread-safe profile store. Loads and mutations replace whole records
/// under the write lock; readers get clones.
#[derive(Default)]
pub struct ProfileStore {
    inner: RwLock<Inner>,
}

fn check_aliases(user: &UserProfile) -> Result<(), ProfileError> {
    for (alias, target) in &user.aliases {
        if user.aliases.contains_key(target) {
            return Err(ProfileError::AliasChain {
                alias: alias.clone(),
                target: target.clone(),
            });
        }
    }
    Ok(())
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_document(doc: ProfileDocument) -> Result<Self, ProfileError> {
        let store = Self::new();
        store.load_document(doc)?;
        Ok(store)
    }

    pub fn load_file(&self, path: &Path) -> Result<usize, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.load_str(&text)
    }

    pub fn load_str(&self, text: &str) -> Result<usize, ProfileError> {
        let doc: ProfileDocument =
            serde_json::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        self.load_document(doc)
    }

    /// Upserts every record of `doc` by key and returns how many records it
    /// held. The document is checked as a whole first; on error nothing
    /// changes.
    pub fn load_document(&self, doc: ProfileDocument) -> Result<usize, ProfileError> {
        let mut inner = self.inner.write();
        let count = doc.classes.len() + doc.users.len();
        let known: BTreeSet<&str> = inner
            .classes
            .keys()
            .map(String::as_str)
            .chain(doc.classes.iter().map(|c| c.class_id.as_str()))
            .collect();
        for u in &doc.users {
            if !known.contains(u.class_id.as_str()) {
                return Err(ProfileError::Parse(format!(
                    "user {} references unknown class {}",
                    u.user_id, u.class_id
                )));
            }
            check_aliases(u).map_err(|e| ProfileError::Parse(e.to_string()))?;
        }
        for c in doc.classes {
            inner.classes.insert(c.class_id.clone(), c);
        }
        for u in doc.users {
            inner.users.insert(u.user_id.clone(), u);
        }
        Ok(count)
    }

    /// Current contents in load-file form, sorted by id.
    pub fn snapshot(&self) -> ProfileDocument {
        let inner = self.inner.read();
        ProfileDocument {
            classes: inner.classes.values().cloned().collect(),
            users: inner.users.values().cloned().collect(),
        }
    }

    pub fn get_user(&self, user_id: &str) -> Result<UserProfile, ProfileError> {
        self.inner
            .read()
            .users
            .get(user_id)
            .cloned()
            .ok_or_else(|| ProfileError::UnknownUser(user_id.to_owned()))
    }

    pub fn get_class(&self, class_id: &str) -> Result<ClassProfile, ProfileError> {
        self.inner
            .read()
            .classes
            .get(class_id)
            .cloned()
            .ok_or_else(|| ProfileError::UnknownClass(class_id.to_owned()))
    }

    /// The class record of a user.
    pub fn class_of(&self, user_id: &str) -> Result<ClassProfile, ProfileError> {
        let inner = self.inner.read();
        let user = inner
            .users
            .get(user_id)
            .ok_or_else(|| ProfileError::UnknownUser(user_id.to_owned()))?;
        inner
            .classes
            .get(&user.class_id)
            .cloned()
            .ok_or_else(|| ProfileError::UnknownClass(user.class_id.clone()))
    }

    pub fn check_right(&self, user_id: &str, permission: &str) -> Result<Decision, ProfileError> {
        let class = self.class_of(user_id)?;
        Ok(if class.rights.contains(permission) {
            Decision::Allow
        } else {
            Decision::Deny
        })
    }

    pub fn set_preference(&self, user_id: &str, key: &str, value: &str) -> Result<(), ProfileError> {
        let mut inner = self.inner.write();
        let user = inner
            .users
            .get_mut(user_id)
            .ok_or_else(|| ProfileError::UnknownUser(user_id.to_owned()))?;
        user.preferences.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    /// Adds or replaces a personal name. Rejected when either side would
    /// make a chain: the target is itself an alias, or the new alias is
    /// already the target of another one.
    pub fn set_alias(&self, user_id: &str, alias: &str, canonical: &str) -> Result<(), ProfileError> {
        let mut inner = self.inner.write();
        let user = inner
            .users
            .get_mut(user_id)
            .ok_or_else(|| ProfileError::UnknownUser(user_id.to_owned()))?;
        let chained = user.aliases.contains_key(canonical)
            || alias == canonical
            || user.aliases.iter().any(|(a, t)| t == alias && a != alias);
        if chained {
            return Err(ProfileError::AliasChain {
                alias: alias.to_owned(),
                target: canonical.to_owned(),
            });
        }
        user.aliases.insert(alias.to_owned(), canonical.to_owned());
        Ok(())
    }

    /// The canonical name behind a personal one; unaliased names come back
    /// unchanged.
    pub fn resolve_alias(&self, user_id: &str, name: &str) -> Result<String, ProfileError> {
        let inner = self.inner.read();
        let user = inner
            .users
            .get(user_id)
            .ok_or_else(|| ProfileError::UnknownUser(user_id.to_owned()))?;
        Ok(user.aliases.get(name).cloned().unwrap_or_else(|| name.to_owned()))
    }

    /// canonical → personal name, for display. When several aliases share a
    /// target the lexicographically smallest wins.
    pub fn display_names(&self, user_id: &str) -> Result<BTreeMap<String, String>, ProfileError> {
        let user = self.get_user(user_id)?;
        let mut out = BTreeMap::new();
        for (alias, target) in user.aliases {
            out.entry(target).or_insert(alias);
        }
        Ok(out)
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.inner.read().users.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
      "classes": [
        {"class_id": "airline", "task_model_id": "airline", "rights": ["flight.read", "flight.update"]},
        {"class_id": "handling", "task_model_id": "handling", "rights": ["flight.read"]}
      ],
      "users": [
        {"user_id": "alice", "class_id": "airline"},
        {"user_id": "bob", "class_id": "handling", "preferences": {"terminal": "phone"}},
        {"user_id": "carol", "class_id": "airline", "aliases": {"shuttle": "AF123"}}
      ]
    }"#;

    fn store() -> ProfileStore {
        let s = ProfileStore::new();
        assert_eq!(s.load_str(FIXTURE).unwrap(), 5);
        s
    }

    #[test]
    fn load_counts_records() {
        let s = store();
        assert_eq!(s.user_ids(), ["alice", "bob", "carol"]);
    }

    #[test]
    fn unknown_class_is_a_parse_error() {
        let s = ProfileStore::new();
        let err = s
            .load_str(r#"{"users":[{"user_id":"x","class_id":"pilot"}]}"#)
            .unwrap_err();
        assert!(matches!(err, ProfileError::Parse(_)));
        assert!(s.user_ids().is_empty());
    }

    #[test]
    fn reload_is_idempotent() {
        let s = store();
        let before = s.snapshot();
        s.load_str(FIXTURE).unwrap();
        assert_eq!(s.snapshot(), before);
    }

    #[test]
    fn rights() {
        let s = store();
        assert_eq!(s.check_right("bob", "flight.update").unwrap(), Decision::Deny);
        assert_eq!(s.check_right("alice", "flight.update").unwrap(), Decision::Allow);
        assert!(matches!(
            s.check_right("mallory", "flight.read"),
            Err(ProfileError::UnknownUser(_))
        ));
    }

    #[test]
    fn aliases() {
        let s = store();
        assert_eq!(s.resolve_alias("alice", "AF123").unwrap(), "AF123");
        s.set_alias("alice", "shuttle", "AF123").unwrap();
        assert_eq!(s.resolve_alias("alice", "shuttle").unwrap(), "AF123");
        assert_eq!(
            s.display_names("alice").unwrap(),
            BTreeMap::from([("AF123".to_owned(), "shuttle".to_owned())])
        );
        // "a" -> "shuttle" where shuttle is an alias
        assert!(matches!(
            s.set_alias("alice", "a", "shuttle"),
            Err(ProfileError::AliasChain { .. })
        ));
        // "AF123" -> "x" would make shuttle -> AF123 -> x
        assert!(matches!(
            s.set_alias("alice", "AF123", "x"),
            Err(ProfileError::AliasChain { .. })
        ));
        assert!(matches!(
            s.resolve_alias("nobody", "x"),
            Err(ProfileError::UnknownUser(_))
        ));
    }

    #[test]
    fn chained_aliases_in_file_are_rejected() {
        let s = ProfileStore::new();
        let doc = r#"{"classes":[{"class_id":"c","task_model_id":"c"}],
          "users":[{"user_id":"u","class_id":"c","aliases":{"a":"b","b":"c"}}]}"#;
        assert!(matches!(s.load_str(doc), Err(ProfileError::Parse(_))));
    }

    #[test]
    fn preferences() {
        let s = store();
        assert_eq!(s.get_user("bob").unwrap().preferences["terminal"], "phone");
        s.set_preference("alice", "lang", "fr").unwrap();
        assert_eq!(s.get_user("alice").unwrap().preferences["lang"], "fr");
        assert!(matches!(
            s.set_preference("ghost", "k", "v"),
            Err(ProfileError::UnknownUser(_))
        ));
    }
}
