//! Self-contained binary checkpoints.
//!
//! Layout (little-endian): the 8-byte magic `SYNFCKPT`, a `u32` version, a
//! `u32` section count, then per section a `u32`-length UTF-8 name and a
//! `u64`-length payload. Text sections hold the manifest, merges, vocab,
//! tagset and labels in their usual file formats. The `tensors` section
//! holds a `u32` count and per tensor its name, a frozen flag byte, a `u32`
//! rank, `u64` dimensions and raw `f64` values.

use std::path::Path;

use super::classifier::Classifier;
use super::data::Tokenizer;
use super::train::Translator;
use crate::annotate::PosTagSet;
use crate::bert::{BertClassifier, BertConfig};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::{ModelConfig, TransformerModel};
use crate::tensor::{ParamStore, Tensor};
use crate::tokenizer::{MergeTable, Vocab};

pub const MAGIC: &[u8; 8] = b"SYNFCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Vec<u8>)>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(corrupt("unexpected end of data"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("name is not UTF-8"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, name: &str, payload: Vec<u8>) {
        self.sections.retain(|(n, _)| n != name);
        self.sections.push((name.to_string(), payload));
    }

    pub fn put_text(&mut self, name: &str, text: &str) {
        self.put(name, text.as_bytes().to_vec());
    }

    pub fn get(&self, name: &str) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| corrupt(format!("missing section {name}")))
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        std::str::from_utf8(self.get(name)?).map_err(|_| corrupt(format!("section {name} is not UTF-8")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            put_str(&mut out, name);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let name = r.string()?;
            let n = r.len64()?;
            ck.sections.push((name, r.take(n)?.to_vec()));
        }
        if !r.bytes.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn encode_tensors(store: &ParamStore) -> Vec<u8> {
    let mut out = (store.len() as u32).to_le_bytes().to_vec();
    for (_, p) in store.iter() {
        put_str(&mut out, &p.name);
        out.push(p.frozen as u8);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Restores values and frozen flags into a store built with the same layout.
pub fn decode_tensors(bytes: &[u8], store: &mut ParamStore) -> Result<()> {
    let mut r = Reader { bytes };
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    let mut frozen = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let flag = r.u8()? != 0;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        frozen.push((name.clone(), flag));
        named.push((name, Tensor::new(&shape, data)?));
    }
    if !r.bytes.is_empty() {
        return Err(corrupt("trailing bytes in tensor section"));
    }
    store.load_values(&named)?;
    for (name, flag) in frozen {
        let id = store.id(&name).expect("checked by load_values");
        store.get_mut(id).frozen = flag;
    }
    Ok(())
}

fn put_tokenizer(ck: &mut Checkpoint, t: &Tokenizer) {
    ck.put_text("merges", &t.merges.to_text());
    ck.put_text("vocab", &t.vocab.to_text());
    ck.put_text("tagset", &t.tagset.to_text());
}

fn get_tokenizer(ck: &Checkpoint) -> Result<Tokenizer> {
    let here = Path::new("<checkpoint>");
    Ok(Tokenizer {
        merges: MergeTable::parse(ck.text("merges")?, here)?,
        vocab: Vocab::parse(ck.text("vocab")?, here)?,
        tagset: PosTagSet::parse(ck.text("tagset")?)?,
    })
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    let found = ck.text("kind")?;
    if found != kind {
        return Err(corrupt(format!("expected a {kind} checkpoint, found {found}")));
    }
    Ok(())
}

pub fn translator_checkpoint(t: &Translator) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.put_text("kind", "translator");
    let mut m = Manifest::new();
    t.model.config.write_manifest(&mut m);
    m.set("seed", t.seed);
    ck.put_text("manifest", &m.to_text());
    put_tokenizer(&mut ck, &t.tokenizer);
    ck.put("tensors", encode_tensors(&t.model.store));
    ck
}

pub fn translator_from_checkpoint(ck: &Checkpoint) -> Result<Translator> {
    expect_kind(ck, "translator")?;
    let m = Manifest::parse(ck.text("manifest")?)?;
    let config = ModelConfig::from_manifest(&m, &ModelConfig::toy(0, 0))?;
    let seed = m.require("seed")?;
    let mut model = TransformerModel::new(config, seed)?;
    decode_tensors(ck.get("tensors")?, &mut model.store)?;
    Ok(Translator {
        tokenizer: get_tokenizer(ck)?,
        model,
        seed,
    })
}

pub fn save_translator(t: &Translator, path: &Path) -> Result<()> {
    translator_checkpoint(t).save(path)
}

pub fn load_translator(path: &Path) -> Result<Translator> {
    translator_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn save_classifier(c: &Classifier, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.put_text("kind", "classifier");
    let mut m = Manifest::new();
    c.model.config.write_manifest(&mut m);
    m.set("seed", c.seed);
    ck.put_text("manifest", &m.to_text());
    put_tokenizer(&mut ck, &c.tokenizer);
    ck.put_text("labels", &c.labels.join("\n"));
    ck.put("tensors", encode_tensors(&c.model.store));
    ck.save(path)
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let ck = Checkpoint::load(path)?;
    expect_kind(&ck, "classifier")?;
    let m = Manifest::parse(ck.text("manifest")?)?;
    let config = BertConfig::from_manifest(&m, &BertConfig::toy(0, 0, 2))?;
    let seed = m.require("seed")?;
    let mut model = BertClassifier::new(config, seed)?;
    decode_tensors(ck.get("tensors")?, &mut model.store)?;
    let labels: Vec<String> = ck.text("labels")?.lines().map(String::from).collect();
    if labels.len() != model.config.num_classes {
        return Err(corrupt(format!("{} labels for {} classes", labels.len(), model.config.num_classes)));
    }
    Ok(Classifier {
        tokenizer: get_tokenizer(&ck)?,
        model,
        labels,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_corruption() {
        let mut ck = Checkpoint::new();
        ck.put_text("a", "hello");
        ck.put("b", vec![1, 2, 3]);
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(ck.get("c").is_err());
    }

    #[test]
    fn tensors_roundtrip_bit_exact() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::new(&[2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()).unwrap();
        let id = a.add("b", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        a.get_mut(id).frozen = true;
        let mut b = ParamStore::new();
        b.add("w", Tensor::zeros(&[2, 2])).unwrap();
        b.add("b", Tensor::zeros(&[3])).unwrap();
        decode_tensors(&encode_tensors(&a), &mut b).unwrap();
        for ((_, p), (_, q)) in a.iter().zip(b.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.value), bits(&q.value));
            assert_eq!(p.frozen, q.frozen);
        }
        let mut wrong = ParamStore::new();
        wrong.add("w", Tensor::zeros(&[4])).unwrap();
        wrong.add("b", Tensor::zeros(&[3])).unwrap();
        assert!(decode_tensors(&encode_tensors(&a), &mut wrong).is_err());
    }
}
