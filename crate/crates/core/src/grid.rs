//! Rectangular layers x steps token grids and their binary file format.
//!
//! File layout (little-endian):
//! - magic `OMNG`
//! - version: u16
//! - n_layers: u16
//! - n_steps: u32
//! - id space: u8 (0 = local per-layer indices, 1 = global vocabulary ids)
//! - n_layers * n_steps token ids as u32, layer-major

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub const GRID_MAGIC: [u8; 4] = *b"OMNG";
pub const GRID_VERSION: u16 = 1;

/// Whether grid entries are codebook-local indices or global vocabulary ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdSpace {
    Local,
    Global,
}

impl IdSpace {
    fn tag(self) -> u8 {
        match self {
            IdSpace::Local => 0,
            IdSpace::Global => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(IdSpace::Local),
            1 => Ok(IdSpace::Global),
            t => Err(Error::Format(format!("unknown id space tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    n_layers: usize,
    n_steps: usize,
    id_space: IdSpace,
    tokens: Vec<TokenId>,
}

impl TokenGrid {
    pub fn filled(n_layers: usize, n_steps: usize, value: TokenId, id_space: IdSpace) -> Self {
        Self {
            n_layers,
            n_steps,
            id_space,
            tokens: vec![value; n_layers * n_steps],
        }
    }

    pub fn from_tokens(
        n_layers: usize,
        n_steps: usize,
        tokens: Vec<TokenId>,
        id_space: IdSpace,
    ) -> Result<Self> {
        if tokens.len() != n_layers * n_steps {
            return Err(Error::Grid(format!(
                "{} tokens for a {n_layers}x{n_steps} grid",
                tokens.len()
            )));
        }
        Ok(Self {
            n_layers,
            n_steps,
            id_space,
            tokens,
        })
    }

    /// Builds a grid from equally long rows.
    pub fn from_rows(rows: &[Vec<TokenId>], id_space: IdSpace) -> Result<Self> {
        let n_steps = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != n_steps) {
            return Err(Error::Grid(format!(
                "row {r} has {} steps, expected {n_steps}",
                rows[r].len()
            )));
        }
        Ok(Self {
            n_layers: rows.len(),
            n_steps,
            id_space,
            tokens: rows.concat(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn id_space(&self) -> IdSpace {
        self.id_space
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn get(&self, layer: usize, step: usize) -> TokenId {
        debug_assert!(layer < self.n_layers && step < self.n_steps);
        self.tokens[layer * self.n_steps + step]
    }

    pub fn set(&mut self, layer: usize, step: usize, id: TokenId) {
        debug_assert!(layer < self.n_layers && step < self.n_steps);
        self.tokens[layer * self.n_steps + step] = id;
    }

    pub fn row(&self, layer: usize) -> &[TokenId] {
        &self.tokens[layer * self.n_steps..(layer + 1) * self.n_steps]
    }

    pub fn row_mut(&mut self, layer: usize) -> &mut [TokenId] {
        &mut self.tokens[layer * self.n_steps..(layer + 1) * self.n_steps]
    }

    pub fn column(&self, step: usize) -> Vec<TokenId> {
        (0..self.n_layers).map(|l| self.get(l, step)).collect()
    }

    /// Appends one step; `column` must hold one id per layer.
    pub fn push_column(&mut self, column: &[TokenId]) {
        assert_eq!(column.len(), self.n_layers);
        let old = self.n_steps;
        let mut tokens = Vec::with_capacity(self.n_layers * (old + 1));
        for (l, &id) in column.iter().enumerate() {
            tokens.extend_from_slice(&self.tokens[l * old..(l + 1) * old]);
            tokens.push(id);
        }
        self.tokens = tokens;
        self.n_steps += 1;
    }

    /// Copy of the steps in `range`.
    pub fn slice_steps(&self, range: std::ops::Range<usize>) -> Self {
        let rows: Vec<Vec<TokenId>> = (0..self.n_layers)
            .map(|l| self.row(l)[range.clone()].to_vec())
            .collect();
        let mut g = Self::from_rows(&rows, self.id_space).expect("rectangular");
        g.n_layers = self.n_layers;
        g
    }

    /// Copy of the layers in `range`.
    pub fn slice_layers(&self, range: std::ops::Range<usize>) -> Self {
        let n_layers = range.len();
        let tokens = self.tokens[range.start * self.n_steps..range.end * self.n_steps].to_vec();
        Self {
            n_layers,
            n_steps: self.n_steps,
            id_space: self.id_space,
            tokens,
        }
    }

    pub fn with_id_space(mut self, id_space: IdSpace) -> Self {
        self.id_space = id_space;
        self
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n_layers = u16::try_from(self.n_layers)
            .map_err(|_| Error::Format(format!("{} layers exceed u16", self.n_layers)))?;
        let n_steps = u32::try_from(self.n_steps)
            .map_err(|_| Error::Format(format!("{} steps exceed u32", self.n_steps)))?;
        w.write_all(&GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&n_layers.to_le_bytes())?;
        w.write_all(&n_steps.to_le_bytes())?;
        w.write_all(&[self.id_space.tag()])?;
        let mut buf = Vec::with_capacity(self.tokens.len() * 4);
        for t in &self.tokens {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != GRID_MAGIC {
            return Err(Error::UnknownMagic(magic));
        }
        let mut b2 = [0u8; 2];
        read_exact(&mut r, &mut b2, "version")?;
        let version = u16::from_le_bytes(b2);
        if version != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        read_exact(&mut r, &mut b2, "n_layers")?;
        let n_layers = u16::from_le_bytes(b2) as usize;
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4, "n_steps")?;
        let n_steps = u32::from_le_bytes(b4) as usize;
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag, "id space")?;
        let id_space = IdSpace::from_tag(tag[0])?;
        let count = n_layers
            .checked_mul(n_steps)
            .ok_or_else(|| Error::Format("grid size overflows".into()))?;
        let mut tokens = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            read_exact(&mut r, &mut b4, "token data")?;
            tokens.push(u32::from_le_bytes(b4));
        }
        Self::from_tokens(n_layers, n_steps, tokens, id_space)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}
