//! The three pairing scenarios and their seeded uniform sampler.
//!
//! - many-to-many: source and target differ in identity and expression;
//! - one-to-one: one fixed identity, expressions differ (self-reenactment);
//! - one-to-another: a fixed source identity and a fixed, different target
//!   identity, expressions differ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    ManyToMany,
    OneToOne { identity: String },
    OneToAnother { source: String, target: String },
}

impl Scenario {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Scenario::ManyToMany => "many-to-many",
            Scenario::OneToOne { .. } => "one-to-one",
            Scenario::OneToAnother { .. } => "one-to-another",
        }
    }

    /// True when `(source, target)` is a valid draw for this scenario.
    pub fn admits(&self, source: &ManifestEntry, target: &ManifestEntry) -> bool {
        match self {
            Scenario::ManyToMany => {
                source.identity_id != target.identity_id
                    && source.expression_id != target.expression_id
            }
            Scenario::OneToOne { identity } => {
                source.identity_id == *identity
                    && target.identity_id == *identity
                    && source.expression_id != target.expression_id
            }
            Scenario::OneToAnother { source: s, target: t } => {
                source.identity_id == *s
                    && target.identity_id == *t
                    && source.expression_id != target.expression_id
            }
        }
    }

    pub fn validate(&self, manifest: &DatasetManifest) -> Result<(), DataError> {
        let identities = manifest.identities();
        let require = |id: &String| {
            if identities.contains(id.as_str()) {
                Ok(())
            } else {
                Err(DataError::UnknownIdentity(id.clone()))
            }
        };
        match self {
            Scenario::ManyToMany => Ok(()),
            Scenario::OneToOne { identity } => require(identity),
            Scenario::OneToAnother { source, target } => {
                if source == target {
                    return Err(DataError::SameIdentityPair(source.clone()));
                }
                require(source)?;
                require(target)
            }
        }
    }
}

/// Scenario plus the seed that makes sampling reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub seed: u64,
}

/// Uniform sampler over the scenario's valid ordered pairs.
pub struct PairSampler {
    valid: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl PairSampler {
    /// Enumerates every ordered entry pair once and keeps the admissible
    /// ones; an empty support is an unsatisfiable scenario.
    pub fn new(manifest: &DatasetManifest, spec: &ScenarioSpec) -> Result<Self, DataError> {
        spec.scenario.validate(manifest)?;
        let entries = manifest.entries();
        let mut valid = Vec::new();
        for (i, a) in entries.iter().enumerate() {
            for (j, b) in entries.iter().enumerate() {
                if spec.scenario.admits(a, b) {
                    valid.push((i, j));
                }
            }
        }
        if valid.is_empty() {
            return Err(DataError::UnsatisfiableScenario(
                spec.scenario.kind_name().to_string(),
            ));
        }
        Ok(Self { valid, rng: ChaCha8Rng::seed_from_u64(spec.seed) })
    }

    /// All valid `(source index, target index)` pairs.
    pub fn support(&self) -> &[(usize, usize)] {
        &self.valid
    }

    /// Draw the next pair of entry indices.
    pub fn next_indices(&mut self) -> (usize, usize) {
        self.valid[self.rng.gen_range(0..self.valid.len())]
    }

    /// Draw the next `(source, target)` entry pair.
    pub fn sample_pair<'m>(
        &mut self,
        manifest: &'m DatasetManifest,
    ) -> (&'m ManifestEntry, &'m ManifestEntry) {
        let (i, j) = self.next_indices();
        (&manifest.entries()[i], &manifest.entries()[j])
    }

    /// Position in the random stream, for exact checkpoint resume.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }
}

/// Parse a scenario from its CLI/config fields.
pub fn scenario_from_fields(
    kind: &str,
    identity: Option<&str>,
    source: Option<&str>,
    target: Option<&str>,
) -> Result<Scenario, DataError> {
    match kind {
        "many-to-many" => Ok(Scenario::ManyToMany),
        "one-to-one" => Ok(Scenario::OneToOne {
            identity: identity
                .ok_or_else(|| DataError::UnknownIdentity("<missing identity>".into()))?
                .to_string(),
        }),
        "one-to-another" => Ok(Scenario::OneToAnother {
            source: source
                .ok_or_else(|| DataError::UnknownIdentity("<missing source>".into()))?
                .to_string(),
            target: target
                .ok_or_else(|| DataError::UnknownIdentity("<missing target>".into()))?
                .to_string(),
        }),
        other => Err(DataError::UnknownScenario(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn entry(id: &str, ex: &str) -> ManifestEntry {
        ManifestEntry {
            image_path: format!("{id}_{ex}.png"),
            identity_id: id.to_string(),
            expression_id: ex.to_string(),
            landmarks_path: format!("{id}_{ex}.json"),
        }
    }

    fn manifest(ids: usize, exprs: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..ids {
            for e in 0..exprs {
                entries.push(entry(&format!("id{i}"), &format!("ex{e}")));
            }
        }
        DatasetManifest::new(PathBuf::from("."), entries)
    }

    #[test]
    fn many_to_many_pairs_always_differ_in_identity_and_expression() {
        let m = manifest(2, 2);
        let spec = ScenarioSpec { scenario: Scenario::ManyToMany, seed: 5 };
        let mut s = PairSampler::new(&m, &spec).unwrap();
        for _ in 0..200 {
            let (a, b) = s.sample_pair(&m);
            assert_ne!(a.identity_id, b.identity_id);
            assert_ne!(a.expression_id, b.expression_id);
        }
    }

    #[test]
    fn one_to_one_support_is_the_expression_pairs_of_that_identity() {
        // One identity with two expressions: exactly the two ordered pairs
        // {(e1, e2), (e2, e1)}, both of identity A.
        let m = DatasetManifest::new(
            PathBuf::from("."),
            vec![entry("A", "e1"), entry("A", "e2"), entry("B", "e1")],
        );
        let spec = ScenarioSpec {
            scenario: Scenario::OneToOne { identity: "A".into() },
            seed: 0,
        };
        let s = PairSampler::new(&m, &spec).unwrap();
        assert_eq!(s.support(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn one_to_another_respects_both_fixed_identities() {
        let m = manifest(3, 2);
        let spec = ScenarioSpec {
            scenario: Scenario::OneToAnother { source: "id0".into(), target: "id2".into() },
            seed: 9,
        };
        let mut s = PairSampler::new(&m, &spec).unwrap();
        for _ in 0..100 {
            let (a, b) = s.sample_pair(&m);
            assert_eq!(a.identity_id, "id0");
            assert_eq!(b.identity_id, "id2");
            assert_ne!(a.expression_id, b.expression_id);
        }
    }

    #[test]
    fn same_seed_gives_the_same_sequence() {
        let m = manifest(3, 3);
        let spec = ScenarioSpec { scenario: Scenario::ManyToMany, seed: 1234 };
        let mut a = PairSampler::new(&m, &spec).unwrap();
        let mut b = PairSampler::new(&m, &spec).unwrap();
        for _ in 0..64 {
            assert_eq!(a.next_indices(), b.next_indices());
        }
    }

    #[test]
    fn support_matches_brute_force_enumeration() {
        let m = manifest(3, 2);
        let spec = ScenarioSpec { scenario: Scenario::ManyToMany, seed: 0 };
        let s = PairSampler::new(&m, &spec).unwrap();
        let mut expected = Vec::new();
        for (i, a) in m.entries().iter().enumerate() {
            for (j, b) in m.entries().iter().enumerate() {
                if a.identity_id != b.identity_id && a.expression_id != b.expression_id {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(s.support(), expected.as_slice());
    }

    #[test]
    fn unsatisfiable_scenarios_error() {
        // A single identity cannot support many-to-many.
        let m = manifest(1, 3);
        let spec = ScenarioSpec { scenario: Scenario::ManyToMany, seed: 0 };
        assert!(matches!(
            PairSampler::new(&m, &spec),
            Err(DataError::UnsatisfiableScenario(_))
        ));
        // Unknown fixed identity.
        let spec = ScenarioSpec {
            scenario: Scenario::OneToOne { identity: "ghost".into() },
            seed: 0,
        };
        assert!(matches!(PairSampler::new(&m, &spec), Err(DataError::UnknownIdentity(_))));
        // Identical source and target identities are not one-to-another.
        let spec = ScenarioSpec {
            scenario: Scenario::OneToAnother { source: "id0".into(), target: "id0".into() },
            seed: 0,
        };
        assert!(matches!(PairSampler::new(&m, &spec), Err(DataError::SameIdentityPair(_))));
    }

    #[test]
    fn scenario_field_parsing() {
        assert_eq!(
            scenario_from_fields("many-to-many", None, None, None).unwrap(),
            Scenario::ManyToMany
        );
        assert!(matches!(
            scenario_from_fields("one-to-one", Some("A"), None, None).unwrap(),
            Scenario::OneToOne { .. }
        ));
        assert!(scenario_from_fields("self-to-self", None, None, None).is_err());
    }
}
