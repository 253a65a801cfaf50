//! Windowed token grids, raster serialization with 4D coordinates, register
//! interleaving and multi-sample packing.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::ChannelGeometry;
use crate::signal::{Epoch, EPOCH_LEN};

/// Samples per token window (0.125 s at 256 Hz).
pub const WINDOW: usize = 32;
/// Windows per epoch.
pub const WINDOWS_PER_EPOCH: usize = EPOCH_LEN / WINDOW;
pub const SPATIAL_BINS: u16 = 50;
/// Half-width of the canonical head bounding box, meters.
pub const HEAD_BOX: f64 = 0.12;
/// Sliding-window attention span, in tokens.
pub const ATTENTION_WINDOW: usize = 65536;

/// Spatial bins and coarse-time index of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Coord4 {
    pub bx: u16,
    pub by: u16,
    pub bz: u16,
    pub m: u16,
}

impl Coord4 {
    pub fn axes(&self) -> [f64; 4] {
        [self.bx as f64, self.by as f64, self.bz as f64, self.m as f64]
    }
}

/// Maps every position through one fixed affine map of the box
/// `[-0.12, 0.12]³` onto `{0..49}³`, clamping outliers.
pub fn bin_coordinates(geometry: &ChannelGeometry) -> Vec<[u16; 3]> {
    geometry.positions().iter().map(|p| bin_position(*p)).collect()
}

pub fn bin_position(p: [f64; 3]) -> [u16; 3] {
    let width = 2.0 * HEAD_BOX / SPATIAL_BINS as f64;
    p.map(|v| {
        let b = ((v + HEAD_BOX) / width).floor();
        b.clamp(0.0, (SPATIAL_BINS - 1) as f64) as u16
    })
}

/// `C × M × W` windows of one epoch plus per-channel positions and dropout flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    n_channels: usize,
    n_windows: usize,
    data: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub dropout_mask: Vec<bool>,
}

impl TokenGrid {
    /// Builds a grid from equal-length channel rows whose length is a multiple of [`WINDOW`].
    pub fn from_rows(rows: &[Vec<f64>], positions: Vec<[f64; 3]>, dropout_mask: Vec<bool>) -> Result<Self> {
        let c = rows.len();
        if c == 0 || positions.len() != c || dropout_mask.len() != c {
            return Err(Error::invalid("grid needs matching, non-empty rows, positions and mask"));
        }
        let n = rows[0].len();
        if n == 0 || n % WINDOW != 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(format!("row length {n} is not a positive multiple of {WINDOW}")));
        }
        let mut data = Vec::with_capacity(c * n);
        for (row, &dropped) in rows.iter().zip(&dropout_mask) {
            if dropped {
                data.extend(std::iter::repeat(0.0).take(n));
            } else {
                data.extend_from_slice(row);
            }
        }
        Ok(Self { n_channels: c, n_windows: n / WINDOW, data, positions, dropout_mask })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn n_tokens(&self) -> usize {
        self.n_channels * self.n_windows
    }

    pub fn window(&self, c: usize, m: usize) -> &[f64] {
        let start = (c * self.n_windows + m) * WINDOW;
        &self.data[start..start + WINDOW]
    }

    pub fn window_mut(&mut self, c: usize, m: usize) -> &mut [f64] {
        let start = (c * self.n_windows + m) * WINDOW;
        &mut self.data[start..start + WINDOW]
    }

    /// Channel `c` as one contiguous signal.
    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.n_windows * WINDOW;
        &self.data[c * len..(c + 1) * len]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_channels).map(|c| self.channel(c).to_vec()).collect()
    }

    /// The same grid with `mask` channels zeroed and flagged.
    pub fn with_dropout(&self, mask: &[bool]) -> TokenGrid {
        let mut out = self.clone();
        for (c, &d) in mask.iter().enumerate() {
            if d {
                let len = self.n_windows * WINDOW;
                out.data[c * len..(c + 1) * len].iter_mut().for_each(|v| *v = 0.0);
                out.dropout_mask[c] = true;
            }
        }
        out
    }

    pub fn bins(&self) -> Vec<[u16; 3]> {
        self.positions.iter().map(|p| bin_position(*p)).collect()
    }
}

/// Splits an epoch into `C × 40` windows of 32 samples. Bad channels are
/// carried as zero windows with their mask flag set.
pub fn window_tokens(epoch: &Epoch) -> Result<TokenGrid> {
    if epoch.samples.iter().any(|r| r.len() != EPOCH_LEN) {
        return Err(Error::invalid(format!("epoch rows must have {EPOCH_LEN} samples")));
    }
    TokenGrid::from_rows(&epoch.samples, epoch.geometry.positions().to_vec(), epoch.bad_channels.clone())
}

/// Raster-ordered tokens: all channels of window 0, then all of window 1, ...
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `L × WINDOW` values, row-major; register rows are zero.
    pub tokens: Vec<f64>,
    pub coords: Vec<Coord4>,
    pub is_register: Vec<bool>,
    pub sample_id: Vec<usize>,
    pub n_channels: usize,
    pub positions: Vec<[f64; 3]>,
    pub dropout_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * WINDOW..(i + 1) * WINDOW]
    }

    /// Channel and coarse-time index of data token `i` in a register-free sequence.
    pub fn channel_time(&self, i: usize) -> (usize, usize) {
        (i % self.n_channels, i / self.n_channels)
    }
}

pub fn raster_serialize(grid: &TokenGrid) -> TokenSequence {
    let (c_n, m_n) = (grid.n_channels(), grid.n_windows());
    let bins = grid.bins();
    let mut tokens = Vec::with_capacity(grid.n_tokens() * WINDOW);
    let mut coords = Vec::with_capacity(grid.n_tokens());
    for m in 0..m_n {
        for (c, b) in bins.iter().enumerate() {
            tokens.extend_from_slice(grid.window(c, m));
            coords.push(Coord4 { bx: b[0], by: b[1], bz: b[2], m: m as u16 });
        }
    }
    let l = coords.len();
    TokenSequence {
        tokens,
        coords,
        is_register: vec![false; l],
        sample_id: vec![0; l],
        n_channels: c_n,
        positions: grid.positions.clone(),
        dropout_mask: grid.dropout_mask.clone(),
    }
}

/// Inverse of [`raster_serialize`]. Registers, if any, are ignored.
pub fn raster_deserialize(seq: &TokenSequence) -> Result<TokenGrid> {
    let data_rows: Vec<usize> = (0..seq.len()).filter(|&i| !seq.is_register[i]).collect();
    let c_n = seq.n_channels;
    if c_n == 0 || data_rows.len() % c_n != 0 {
        return Err(Error::invalid("sequence length is not a multiple of the channel count"));
    }
    let m_n = data_rows.len() / c_n;
    let mut rows = vec![vec![0.0; m_n * WINDOW]; c_n];
    for (i, &row) in data_rows.iter().enumerate() {
        let (c, m) = (i % c_n, i / c_n);
        rows[c][m * WINDOW..(m + 1) * WINDOW].copy_from_slice(seq.token(row));
    }
    let mut grid = TokenGrid::from_rows(&rows, seq.positions.clone(), vec![false; c_n])?;
    grid.dropout_mask = seq.dropout_mask.clone();
    Ok(grid)
}

/// Prepends a register slot to every group of `d` tokens (the trailing
/// partial group included). Registers take the coordinates of the first
/// token of their group.
pub fn interleave_registers(seq: &TokenSequence, d: usize) -> Result<TokenSequence> {
    if d < 1 {
        return Err(Error::invalid("register stride must be at least 1"));
    }
    let l = seq.len();
    let n_groups = l.div_ceil(d);
    let mut out = TokenSequence {
        tokens: Vec::with_capacity((l + n_groups) * WINDOW),
        coords: Vec::with_capacity(l + n_groups),
        is_register: Vec::with_capacity(l + n_groups),
        sample_id: Vec::with_capacity(l + n_groups),
        n_channels: seq.n_channels,
        positions: seq.positions.clone(),
        dropout_mask: seq.dropout_mask.clone(),
    };
    for i in 0..l {
        if i % d == 0 {
            out.tokens.extend(std::iter::repeat(0.0).take(WINDOW));
            out.coords.push(seq.coords[i]);
            out.is_register.push(true);
            out.sample_id.push(seq.sample_id[i]);
        }
        out.tokens.extend_from_slice(seq.token(i));
        out.coords.push(seq.coords[i]);
        out.is_register.push(false);
        out.sample_id.push(seq.sample_id[i]);
    }
    Ok(out)
}

pub fn strip_registers(seq: &TokenSequence) -> TokenSequence {
    let keep: Vec<usize> = (0..seq.len()).filter(|&i| !seq.is_register[i]).collect();
    TokenSequence {
        tokens: keep.iter().flat_map(|&i| seq.token(i).iter().copied()).collect(),
        coords: keep.iter().map(|&i| seq.coords[i]).collect(),
        is_register: vec![false; keep.len()],
        sample_id: keep.iter().map(|&i| seq.sample_id[i]).collect(),
        n_channels: seq.n_channels,
        positions: seq.positions.clone(),
        dropout_mask: seq.dropout_mask.clone(),
    }
}

/// Several sequences concatenated into one, with block-diagonal visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    /// Index into the list passed to [`pack_samples`] for each member.
    pub members: Vec<usize>,
    /// Token range of each member within the pack.
    pub segments: Vec<Range<usize>>,
    pub coords: Vec<Coord4>,
    pub is_register: Vec<bool>,
    /// Member index (position in `members`) of every token.
    pub sample_id: Vec<usize>,
    pub tokens: Vec<f64>,
    pub window: usize,
}

impl PackedBatch {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Whether token `i` may attend to token `j`.
    pub fn visible(&self, i: usize, j: usize) -> bool {
        self.sample_id[i] == self.sample_id[j] && i.abs_diff(j) < self.window
    }

    pub fn dense_mask(&self) -> Vec<Vec<bool>> {
        (0..self.len()).map(|i| (0..self.len()).map(|j| self.visible(i, j)).collect()).collect()
    }
}

/// Greedy first-fit packing into packs of at most `max_tokens` tokens.
pub fn pack_samples(seqs: &[TokenSequence], max_tokens: usize) -> Result<Vec<PackedBatch>> {
    let mut bins: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        if s.len() > max_tokens {
            return Err(Error::invalid(format!(
                "sequence {i} has {} tokens, more than the pack limit {max_tokens}",
                s.len()
            )));
        }
        match bins.iter_mut().find(|(used, _)| used + s.len() <= max_tokens) {
            Some((used, members)) => {
                *used += s.len();
                members.push(i);
            }
            None => bins.push((s.len(), vec![i])),
        }
    }
    Ok(bins.into_iter().map(|(_, members)| concat(seqs, &members)).collect())
}

pub(crate) fn concat(seqs: &[TokenSequence], members: &[usize]) -> PackedBatch {
    let mut pack = PackedBatch {
        members: members.to_vec(),
        segments: Vec::with_capacity(members.len()),
        coords: Vec::new(),
        is_register: Vec::new(),
        sample_id: Vec::new(),
        tokens: Vec::new(),
        window: ATTENTION_WINDOW,
    };
    for (k, &i) in members.iter().enumerate() {
        let s = &seqs[i];
        let start = pack.coords.len();
        pack.segments.push(start..start + s.len());
        pack.coords.extend_from_slice(&s.coords);
        pack.is_register.extend_from_slice(&s.is_register);
        pack.sample_id.extend(std::iter::repeat(k).take(s.len()));
        pack.tokens.extend_from_slice(&s.tokens);
    }
    pack
}
