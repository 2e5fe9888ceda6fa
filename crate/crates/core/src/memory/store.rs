//! On-disk layout, one directory per user:
//!
//! ```text
//! <root>/<user_id>/episodic.jsonl   one InteractionRecord per line
//! <root>/<user_id>/profile.json     semantic profile + record embeddings
//! <root>/<user_id>/persona.json     persona with full version history
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodicBuffer, MemoryError, SemanticProfile};
use crate::agent::Persona;
use crate::embedding::{Encoder, Vector};
use crate::model::{InteractionRecord, UserId};

pub const EPISODIC_FILE: &str = "episodic.jsonl";
pub const PROFILE_FILE: &str = "profile.json";
pub const PERSONA_FILE: &str = "persona.json";
pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileFile {
    format_version: u32,
    #[serde(default)]
    encoder_fingerprint: Option<String>,
    #[serde(default)]
    embeddings: Vec<Vector>,
    #[serde(default)]
    profile: Option<SemanticProfile>,
}

impl Default for ProfileFile {
    fn default() -> Self {
        Self {
            format_version: STORE_FORMAT_VERSION,
            encoder_fingerprint: None,
            embeddings: Vec::new(),
            profile: None,
        }
    }
}

/// Directory-backed store for buffers, profiles and personas.
#[derive(Debug, Clone)]
pub struct UserStore {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MemoryError + '_ {
    move |source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> MemoryError {
    MemoryError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Write to a sibling temp file, then rename over the target.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), MemoryError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl UserStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn user_dir(&self, user: &UserId) -> PathBuf {
        self.root.join(user.as_str())
    }

    fn ensure_dir(&self, user: &UserId) -> Result<PathBuf, MemoryError> {
        let dir = self.user_dir(user);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    /// User ids that have a directory under the root, sorted.
    pub fn users(&self) -> Result<Vec<UserId>, MemoryError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    if let Ok(id) = UserId::new(name) {
                        out.push(id);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn read_profile_file(&self, user: &UserId) -> Result<Option<ProfileFile>, MemoryError> {
        let path = self.user_dir(user).join(PROFILE_FILE);
        let raw = match fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let file: ProfileFile = serde_json::from_str(&raw).map_err(|e| format_err(&path, e.to_string()))?;
        if file.format_version != STORE_FORMAT_VERSION {
            return Err(format_err(
                &path,
                format!("unsupported format_version {} (expected {STORE_FORMAT_VERSION})", file.format_version),
            ));
        }
        Ok(Some(file))
    }

    fn write_profile_file(&self, user: &UserId, file: &ProfileFile) -> Result<(), MemoryError> {
        let dir = self.ensure_dir(user)?;
        let path = dir.join(PROFILE_FILE);
        let json = serde_json::to_vec_pretty(file).map_err(|e| format_err(&path, e.to_string()))?;
        write_atomic(&path, &json)
    }

    /// Writes `episodic.jsonl` and the embedding section of `profile.json`.
    pub fn save_buffer(&self, buffer: &EpisodicBuffer) -> Result<(), MemoryError> {
        let dir = self.ensure_dir(buffer.user())?;
        let path = dir.join(EPISODIC_FILE);
        let mut out = Vec::new();
        for r in buffer.records() {
            serde_json::to_writer(&mut out, r).map_err(|e| format_err(&path, e.to_string()))?;
            out.push(b'\n');
        }
        write_atomic(&path, &out)?;

        let mut file = self.read_profile_file(buffer.user())?.unwrap_or_default();
        file.encoder_fingerprint = Some(buffer.encoder_fingerprint().to_string());
        file.embeddings = buffer.embeddings().to_vec();
        self.write_profile_file(buffer.user(), &file)
    }

    /// Reads `episodic.jsonl` alone, sorted chronologically.
    pub fn load_records(&self, user: &UserId) -> Result<Vec<InteractionRecord>, MemoryError> {
        let path = self.user_dir(user).join(EPISODIC_FILE);
        let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut records = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: InteractionRecord =
                serde_json::from_str(line).map_err(|e| format_err(&path, format!("line {}: {e}", i + 1)))?;
            r.validate().map_err(|e| format_err(&path, format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(records)
    }

    /// Loads a buffer saved by [`UserStore::save_buffer`]. Stored embeddings
    /// must come from `encoder`; mismatches are reported, never re-embedded.
    pub fn load_buffer(&self, user: &UserId, encoder: &Encoder) -> Result<EpisodicBuffer, MemoryError> {
        let records = self.load_records(user)?;
        let episodic = self.user_dir(user).join(EPISODIC_FILE);
        if let Some(i) = records.windows(2).position(|w| w[0].timestamp() > w[1].timestamp()) {
            return Err(format_err(&episodic, format!("record {} is out of chronological order", i + 1)));
        }
        let path = self.user_dir(user).join(PROFILE_FILE);
        let file = self
            .read_profile_file(user)?
            .ok_or_else(|| format_err(&path, "missing embeddings file"))?;
        let fingerprint = file.encoder_fingerprint.unwrap_or_default();
        if fingerprint != encoder.fingerprint() {
            return Err(format_err(
                &path,
                format!("encoder fingerprint `{fingerprint}` does not match `{}`", encoder.fingerprint()),
            ));
        }
        if file.embeddings.len() != records.len() {
            return Err(format_err(
                &path,
                format!("{} embeddings for {} records", file.embeddings.len(), records.len()),
            ));
        }
        if let Some(i) = file.embeddings.iter().position(|v| v.dim() != encoder.dim()) {
            return Err(format_err(
                &path,
                format!(
                    "embedding for record {i} has length {} (expected {})",
                    file.embeddings[i].dim(),
                    encoder.dim()
                ),
            ));
        }
        Ok(EpisodicBuffer::from_parts(user.clone(), records, file.embeddings, fingerprint))
    }

    pub fn save_profile(&self, profile: &SemanticProfile) -> Result<(), MemoryError> {
        let mut file = self.read_profile_file(&profile.user)?.unwrap_or_default();
        file.profile = Some(profile.clone());
        self.write_profile_file(&profile.user, &file)
    }

    pub fn load_profile(&self, user: &UserId) -> Result<Option<SemanticProfile>, MemoryError> {
        Ok(self.read_profile_file(user)?.and_then(|f| f.profile))
    }

    pub fn save_persona(&self, persona: &Persona) -> Result<(), MemoryError> {
        let dir = self.ensure_dir(&persona.user)?;
        let path = dir.join(PERSONA_FILE);
        let json = serde_json::to_vec_pretty(persona).map_err(|e| format_err(&path, e.to_string()))?;
        write_atomic(&path, &json)
    }

    pub fn load_persona(&self, user: &UserId) -> Result<Option<Persona>, MemoryError> {
        let path = self.user_dir(user).join(PERSONA_FILE);
        let raw = match fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let persona: Persona = serde_json::from_str(&raw).map_err(|e| format_err(&path, e.to_string()))?;
        if persona.version != persona.history.len() {
            return Err(format_err(&path, "persona version does not match history length"));
        }
        Ok(Some(persona))
    }

    /// Every persona stored under the root, ordered by user id.
    pub fn load_personas(&self) -> Result<Vec<Persona>, MemoryError> {
        let mut out = Vec::new();
        for user in self.users()? {
            if let Some(p) = self.load_persona(&user)? {
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Metadata, TaskKind};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn uid(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn sample_buffer(n: usize, enc: &Encoder) -> EpisodicBuffer {
        let recs = (0..n)
            .map(|i| {
                let mut m = Metadata::at(100 + i as u64);
                m.session_id = Some(format!("s{i}"));
                m.extra.insert("source".into(), "fixture".into());
                InteractionRecord::new(format!("query {i}"), format!("answer {i}"), m).unwrap()
            })
            .collect();
        EpisodicBuffer::from_records(uid("alice"), recs, enc).unwrap()
    }

    #[test]
    fn empty_buffer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        let enc = Encoder::default();
        let b = EpisodicBuffer::new(uid("alice"), &enc);
        store.save_buffer(&b).unwrap();
        assert_eq!(store.load_buffer(b.user(), &enc).unwrap(), b);
    }

    #[test]
    fn three_record_buffer_reserializes_byte_identically() {
        let enc = Encoder::hashed(32, 4);
        let b = sample_buffer(3, &enc);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (s1, s2) = (UserStore::new(d1.path()), UserStore::new(d2.path()));
        s1.save_buffer(&b).unwrap();
        let loaded = s1.load_buffer(b.user(), &enc).unwrap();
        assert_eq!(loaded, b);
        s2.save_buffer(&loaded).unwrap();
        for f in [EPISODIC_FILE, PROFILE_FILE] {
            let a = fs::read(s1.user_dir(b.user()).join(f)).unwrap();
            let c = fs::read(s2.user_dir(b.user()).join(f)).unwrap();
            assert_eq!(a, c, "{f} differs");
        }
    }

    #[test]
    fn episodic_jsonl_uses_flat_keys() {
        let enc = Encoder::hashed(8, 0);
        let b = sample_buffer(1, &enc);
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        store.save_buffer(&b).unwrap();
        let line = fs::read_to_string(store.user_dir(b.user()).join(EPISODIC_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["extra", "ground_truth", "query", "session_id", "timestamp"]);
    }

    #[test]
    fn corrupted_embedding_length_names_record() {
        let enc = Encoder::hashed(8, 0);
        let b = sample_buffer(3, &enc);
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        store.save_buffer(&b).unwrap();
        let path = store.user_dir(b.user()).join(PROFILE_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["embeddings"][1].as_array_mut().unwrap().pop();
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let err = store.load_buffer(b.user(), &enc).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn fingerprint_mismatch_is_reported() {
        let enc = Encoder::hashed(8, 0);
        let b = sample_buffer(2, &enc);
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        store.save_buffer(&b).unwrap();
        let err = store.load_buffer(b.user(), &Encoder::hashed(8, 1)).unwrap_err();
        assert!(matches!(err, MemoryError::Format { .. }));
    }

    #[test]
    fn bad_version_is_reported() {
        let enc = Encoder::hashed(8, 0);
        let b = sample_buffer(1, &enc);
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        store.save_buffer(&b).unwrap();
        let path = store.user_dir(b.user()).join(PROFILE_FILE);
        let raw = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&path, raw).unwrap();
        assert!(store.load_buffer(b.user(), &enc).unwrap_err().to_string().contains("format_version"));
    }

    #[test]
    fn profile_and_embeddings_share_file_without_clobbering() {
        let enc = Encoder::hashed(8, 0);
        let b = sample_buffer(2, &enc);
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        let profile = SemanticProfile {
            user: b.user().clone(),
            text: "likes noir".into(),
            source_count: 2,
            created_at: 101,
            task: TaskKind::MovieTagging,
        };
        store.save_profile(&profile).unwrap();
        store.save_buffer(&b).unwrap();
        assert_eq!(store.load_profile(b.user()).unwrap(), Some(profile));
        assert_eq!(store.load_buffer(b.user(), &enc).unwrap(), b);
    }

    #[test]
    fn persona_round_trip_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let store = UserStore::new(dir.path());
        let mut p = Persona::new(uid("bob"), "v0");
        p.replace_text("v1");
        store.save_persona(&p).unwrap();
        store.save_persona(&Persona::new(uid("amy"), "x")).unwrap();
        assert_eq!(store.load_persona(&uid("bob")).unwrap(), Some(p));
        let users: Vec<_> = store.load_personas().unwrap().into_iter().map(|p| p.user.to_string()).collect();
        assert_eq!(users, ["amy", "bob"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn randomized_buffers_round_trip(
            items in proptest::collection::vec(("[a-zA-Z ]{1,12}", "[a-z0-9]{1,6}", 0u64..1_000, proptest::option::of("[a-z]{1,4}")), 0..12),
            dim in 1usize..24,
            seed in 0u64..4,
        ) {
            let enc = Encoder::hashed(dim, seed);
            let recs = items
                .into_iter()
                .filter(|(q, _, _, _)| !q.trim().is_empty())
                .map(|(q, a, ts, s)| {
                    let mut m = Metadata::at(ts);
                    m.session_id = s.clone();
                    if let Some(s) = s {
                        m.extra = BTreeMap::from([("k".to_string(), s)]);
                    }
                    InteractionRecord::new(q, a, m).unwrap()
                })
                .collect();
            let b = EpisodicBuffer::from_records(uid("p"), recs, &enc).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let store = UserStore::new(dir.path());
            store.save_buffer(&b).unwrap();
            prop_assert_eq!(store.load_buffer(b.user(), &enc).unwrap(), b);
        }
    }
}
