//! Binary corpus cache: a header (params, provenance, counts) followed by
//! per-sample records. Counts are little-endian u64, state arrays
//! little-endian f64, so files are bit-exact across platforms. A trailing
//! SHA-256 digest guards integrity.

use super::{Corpus, Provenance, Sample, SampleAgent, SampleError, SampleId};
use crate::ingest::BehaviorClass;
use crate::scene::{AgentSize, AgentType, DataParams, GapConflict};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 8] = b"STEPCRP1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    params: DataParams,
    provenance: Vec<Provenance>,
    sample_count: u64,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn i64(&mut self, v: i64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }

    fn points(&mut self, pts: &[[f64; 2]]) {
        self.u64(pts.len() as u64);
        for p in pts {
            self.f64(p[0]);
            self.f64(p[1]);
        }
    }

    fn mask(&mut self, mask: &[bool]) {
        self.u64(mask.len() as u64);
        for &m in mask {
            self.u8(u8::from(m));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SampleError> {
        if self.pos + n > self.buf.len() {
            return Err(SampleError::Corrupt("unexpected end of file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, SampleError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SampleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SampleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, SampleError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SampleError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, SampleError> {
        let len = self.u64()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| SampleError::Corrupt("invalid utf-8".into()))
    }

    fn points(&mut self) -> Result<Vec<[f64; 2]>, SampleError> {
        let len = self.u64()? as usize;
        (0..len).map(|_| Ok([self.f64()?, self.f64()?])).collect()
    }

    fn mask(&mut self) -> Result<Vec<bool>, SampleError> {
        let len = self.u64()? as usize;
        (0..len).map(|_| Ok(self.u8()? != 0)).collect()
    }
}

fn agent_type_code(t: AgentType) -> u8 {
    match t {
        AgentType::Vehicle => 0,
        AgentType::Pedestrian => 1,
        AgentType::Bicycle => 2,
        AgentType::Motorcycle => 3,
    }
}

fn agent_type_from(code: u8) -> Result<AgentType, SampleError> {
    Ok(match code {
        0 => AgentType::Vehicle,
        1 => AgentType::Pedestrian,
        2 => AgentType::Bicycle,
        3 => AgentType::Motorcycle,
        other => return Err(SampleError::Corrupt(format!("agent type code {other}"))),
    })
}

fn write_sample(w: &mut Writer, s: &Sample) {
    w.str(&s.sample_id.dataset_id);
    w.str(&s.sample_id.scene_id);
    w.i64(s.sample_id.t0_nanos);
    w.str(&s.location_id);
    w.f64(s.t0);
    w.u64(s.agents.len() as u64);
    for a in &s.agents {
        w.str(&a.agent_id);
        w.u8(agent_type_code(a.agent_type));
        match a.size {
            Some(size) => {
                w.u8(1);
                w.f64(size.length);
                w.f64(size.width);
            }
            None => w.u8(0),
        }
        w.u8(u8::from(a.predicted));
        w.points(&a.past);
        w.points(&a.future);
        w.mask(&a.past_mask);
        w.mask(&a.future_mask);
    }
    match &s.behavior_label {
        Some(c) => {
            w.u8(1);
            w.str(&c.family_id);
            w.str(&c.label);
        }
        None => w.u8(0),
    }
    match &s.gap_conflict {
        Some(g) => {
            w.u8(1);
            w.f64(g.point[0]);
            w.f64(g.point[1]);
            w.f64(g.entry_dir[0]);
            w.f64(g.entry_dir[1]);
            w.f64(g.circulating_dir[0]);
            w.f64(g.circulating_dir[1]);
            w.str(&g.entering_id);
            w.str(&g.circulating_id);
        }
        None => w.u8(0),
    }
    w.u64(s.labels.len() as u64);
    for (k, v) in &s.labels {
        w.str(k);
        w.str(v);
    }
}

fn read_sample(r: &mut Reader<'_>) -> Result<Sample, SampleError> {
    let dataset_id = r.str()?;
    let scene_id = r.str()?;
    let t0_nanos = r.i64()?;
    let location_id = r.str()?;
    let t0 = r.f64()?;
    let agent_count = r.u64()? as usize;
    let mut agents = Vec::with_capacity(agent_count);
    for _ in 0..agent_count {
        let agent_id = r.str()?;
        let agent_type = agent_type_from(r.u8()?)?;
        let size = match r.u8()? {
            0 => None,
            _ => Some(AgentSize { length: r.f64()?, width: r.f64()? }),
        };
        let predicted = r.u8()? != 0;
        agents.push(SampleAgent {
            agent_id,
            agent_type,
            size,
            predicted,
            past: r.points()?,
            future: r.points()?,
            past_mask: r.mask()?,
            future_mask: r.mask()?,
        });
    }
    let behavior_label = match r.u8()? {
        0 => None,
        _ => Some(BehaviorClass { family_id: r.str()?, label: r.str()? }),
    };
    let gap_conflict = match r.u8()? {
        0 => None,
        _ => Some(GapConflict {
            point: [r.f64()?, r.f64()?],
            entry_dir: [r.f64()?, r.f64()?],
            circulating_dir: [r.f64()?, r.f64()?],
            entering_id: r.str()?,
            circulating_id: r.str()?,
        }),
    };
    let label_count = r.u64()? as usize;
    let mut labels = BTreeMap::new();
    for _ in 0..label_count {
        let k = r.str()?;
        let v = r.str()?;
        labels.insert(k, v);
    }
    Ok(Sample {
        sample_id: SampleId { dataset_id, scene_id, t0_nanos },
        location_id,
        t0,
        agents,
        behavior_label,
        gap_conflict,
        labels,
    })
}

/// Serializes a corpus to its binary cache form.
pub fn corpus_to_bytes(corpus: &Corpus) -> Result<Vec<u8>, SampleError> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let header = Header {
        params: corpus.params.clone(),
        provenance: corpus.provenance.clone(),
        sample_count: corpus.samples.len() as u64,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| SampleError::Io(e.to_string()))?;
    w.u64(header_json.len() as u64);
    w.bytes(&header_json);
    for sample in &corpus.samples {
        write_sample(&mut w, sample);
    }
    let digest = Sha256::digest(&w.buf);
    w.bytes(&digest);
    Ok(w.buf)
}

/// Parses a corpus from its binary cache form, verifying the digest.
pub fn corpus_from_bytes(bytes: &[u8]) -> Result<Corpus, SampleError> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(SampleError::Corrupt("file too short".into()));
    }
    let (payload, digest) = bytes.split_at(bytes.len() - 32);
    let expected = Sha256::digest(payload);
    if digest != expected.as_slice() {
        return Err(SampleError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader::new(payload);
    if r.take(8)? != MAGIC {
        return Err(SampleError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(SampleError::Corrupt(format!("unsupported version {version}")));
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| SampleError::Corrupt(format!("header: {e}")))?;
    let mut samples = Vec::with_capacity(header.sample_count as usize);
    for _ in 0..header.sample_count {
        samples.push(read_sample(&mut r)?);
    }
    if r.pos != payload.len() {
        return Err(SampleError::Corrupt("trailing bytes".into()));
    }
    Ok(Corpus { params: header.params, provenance: header.provenance, samples })
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), SampleError> {
    let bytes = corpus_to_bytes(corpus)?;
    std::fs::write(path, bytes).map_err(|e| SampleError::Io(format!("{}: {e}", path.display())))
}

pub fn read_corpus(path: &Path) -> Result<Corpus, SampleError> {
    let bytes =
        std::fs::read(path).map_err(|e| SampleError::Io(format!("{}: {e}", path.display())))?;
    corpus_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, GapProfile, ScenarioKind, SyntheticConfig};
    use crate::sample::{assemble_corpus, CorpusSource};
    use crate::scene::{DataParams, T0Policy};

    fn corpus() -> Corpus {
        let set = generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::RoundaboutGap,
            scene_count: 4,
            agents_per_scene: 3,
            native_dt: 0.25,
            duration: 10.0,
            noise_sigma: 0.05,
            seed: 3,
            gap_profile: GapProfile::Mixed,
            dataset_id: "synthetic".into(),
            location_id: "synthloc".into(),
        })
        .unwrap();
        let params = DataParams::new(6, 8, 0.5, T0Policy::RegularSpacing { gap: 1.5 });
        assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = corpus();
        let bytes = corpus_to_bytes(&c).unwrap();
        let back = corpus_from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        // serialization itself is deterministic
        assert_eq!(bytes, corpus_to_bytes(&back).unwrap());
    }

    #[test]
    fn corruption_detected() {
        let c = corpus();
        let mut bytes = corpus_to_bytes(&c).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let err = corpus_from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, SampleError::Corrupt(_)), "{err:?}");
    }

    #[test]
    fn truncation_detected() {
        let c = corpus();
        let bytes = corpus_to_bytes(&c).unwrap();
        let err = corpus_from_bytes(&bytes[..bytes.len() - 7]).unwrap_err();
        assert!(matches!(err, SampleError::Corrupt(_)));
    }
}
