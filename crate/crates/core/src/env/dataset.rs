//! Offline transition-tuple files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "DTRT"
//! version      u32      1
//! state_dim    u64
//! action_dim   u64
//! n_users      u64
//! episode_len  u64
//! count        u64
//! env_hash     64 bytes ASCII hex (SHA-256 of the environment config)
//! records      count x (2*state_dim + action_dim + 2 + n_users) f64
//!              laid out as s_t, a_t, reward, cost_agg, cost_per_user, s_{t+1}
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DTRT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_users: usize,
    pub episode_len: usize,
    pub env_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub cost_per_user: Vec<f64>,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<TransitionRecord>,
}

impl DatasetHeader {
    fn record_width(&self) -> usize {
        2 * self.state_dim + self.action_dim + 2 + self.n_users
    }
}

impl Dataset {
    pub fn new(header: DatasetHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, rec: TransitionRecord) -> Result<()> {
        let h = &self.header;
        if rec.state.len() != h.state_dim
            || rec.next_state.len() != h.state_dim
            || rec.action.len() != h.action_dim
            || rec.cost_per_user.len() != h.n_users
        {
            return Err(Error::Format("record shape does not match header".into()));
        }
        self.records.push(rec);
        Ok(())
    }

    /// States at the first slot of each episode.
    pub fn initial_states(&self) -> Vec<Vec<f64>> {
        let t = self.header.episode_len.max(1);
        self.records.iter().step_by(t).map(|r| r.state.clone()).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let h = &self.header;
        if h.env_hash.len() != 64 || !h.env_hash.is_ascii() {
            return Err(Error::Format("env hash must be 64 hex characters".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [h.state_dim, h.action_dim, h.n_users, h.episode_len, self.records.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(h.env_hash.as_bytes())?;
        let mut buf = Vec::with_capacity(h.record_width() * 8);
        for rec in &self.records {
            buf.clear();
            let fields = rec
                .state
                .iter()
                .chain(&rec.action)
                .chain(std::iter::once(&rec.reward))
                .chain(std::iter::once(&rec.cost))
                .chain(&rec.cost_per_user)
                .chain(&rec.next_state);
            for v in fields {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a transition dataset".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let mut read_u64 = || -> Result<usize> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b) as usize)
        };
        let state_dim = read_u64()?;
        let action_dim = read_u64()?;
        let n_users = read_u64()?;
        let episode_len = read_u64()?;
        let count = read_u64()?;
        let mut hash = [0u8; 64];
        r.read_exact(&mut hash)?;
        let env_hash = String::from_utf8(hash.to_vec()).map_err(|_| Error::Format("env hash is not ASCII".into()))?;
        let header = DatasetHeader {
            state_dim,
            action_dim,
            n_users,
            episode_len,
            env_hash,
        };
        let width = header.record_width();
        let mut raw = vec![0u8; width * 8];
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut raw)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let (s, rest) = vals.split_at(state_dim);
            let (a, rest) = rest.split_at(action_dim);
            let (rc, rest) = rest.split_at(2);
            let (cu, sp) = rest.split_at(n_users);
            records.push(TransitionRecord {
                state: s.to_vec(),
                action: a.to_vec(),
                reward: rc[0],
                cost: rc[1],
                cost_per_user: cu.to_vec(),
                next_state: sp.to_vec(),
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after last record".into()));
        }
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// CSV with header `s_0..s_{S-1},a_0..a_{A-1},reward,cost,sp_0..sp_{S-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let h = &self.header;
        let mut wtr = csv::Writer::from_writer(w);
        let mut head: Vec<String> = (0..h.state_dim).map(|i| format!("s_{i}")).collect();
        head.extend((0..h.action_dim).map(|i| format!("a_{i}")));
        head.push("reward".into());
        head.push("cost".into());
        head.extend((0..h.state_dim).map(|i| format!("sp_{i}")));
        wtr.write_record(&head)?;
        for rec in &self.records {
            let row: Vec<String> = rec
                .state
                .iter()
                .chain(&rec.action)
                .chain([rec.reward, rec.cost].iter())
                .chain(&rec.next_state)
                .map(|v| v.to_string())
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
