//! Bit-exact binary snapshots of one solution state and
//! directory-valued checkpoints of whole histories.
//!
//! Layout: magic `NSPNP1\0`, little-endian u32 dims, u32 cell count per
//! axis, f64 length per axis, u8 boundary code, f64 time, then the
//! velocity component arrays (face layout, in axis order) followed by
//! the pressure, both species and the potential (cell layout), all
//! little-endian f64.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{BcKind, GridSpec, Layout};
use crate::history::{FieldHistory, State};

pub const MAGIC: &[u8; 7] = b"NSPNP1\0";

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            what: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64_array(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; len * 8];
        self.take(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn write_f64_array(w: &mut impl Write, a: &[f64]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(a.len() * 8);
    for v in a {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

/// Serialize one state at the given time.
pub fn write_state(path: &Path, state: &State, time: f64) -> Result<()> {
    let grid = state.grid();
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(grid.dims() as u32).to_le_bytes())?;
    for k in 0..grid.dims() {
        w.write_all(&(grid.cells(k) as u32).to_le_bytes())?;
    }
    for k in 0..grid.dims() {
        w.write_all(&grid.length(k).to_le_bytes())?;
    }
    w.write_all(&[grid.bc().code()])?;
    w.write_all(&time.to_le_bytes())?;
    for comp in &state.u.components {
        write_f64_array(&mut w, comp)?;
    }
    write_f64_array(&mut w, &state.p.values)?;
    write_f64_array(&mut w, &state.n_plus.values)?;
    write_f64_array(&mut w, &state.n_minus.values)?;
    write_f64_array(&mut w, &state.psi.values)?;
    w.flush()?;
    Ok(())
}

/// Parse one state; errors carry the byte offset of the first problem.
pub fn read_state(path: &Path) -> Result<(State, f64)> {
    let mut r = Reader::new(std::io::BufReader::new(fs::File::open(path)?));
    let mut magic = [0u8; 7];
    r.take(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let dims = r.u32("dims")? as usize;
    if dims != 2 && dims != 3 {
        return Err(Error::Format {
            offset: 7,
            what: format!("dims must be 2 or 3, got {dims}"),
        });
    }
    let mut cells = Vec::with_capacity(dims);
    for k in 0..dims {
        cells.push(r.u32(&format!("cell count axis {k}"))? as usize);
    }
    let mut lengths = Vec::with_capacity(dims);
    for k in 0..dims {
        lengths.push(r.f64(&format!("length axis {k}"))?);
    }
    let bc_at = r.offset;
    let bc_code = r.u8("boundary code")?;
    let bc = BcKind::from_code(bc_code).ok_or(Error::Format {
        offset: bc_at,
        what: format!("unknown boundary code {bc_code}"),
    })?;
    let time = r.f64("time")?;
    let grid = GridSpec::new(dims, &cells, &lengths, bc)
        .map_err(|e| Error::Format {
            offset: bc_at,
            what: format!("invalid grid header: {e}"),
        })?;
    let mut state = State::zeros(&grid);
    for k in 0..dims {
        let len = Layout::new(grid.face_counts(k)).len();
        state.u.components[k] = r.f64_array(len, &format!("velocity component {k}"))?;
    }
    let cells_len = grid.cell_count();
    state.p.values = r.f64_array(cells_len, "pressure")?;
    state.n_plus.values = r.f64_array(cells_len, "positive species")?;
    state.n_minus.values = r.f64_array(cells_len, "negative species")?;
    state.psi.values = r.f64_array(cells_len, "potential")?;
    Ok((state, time))
}

fn snapshot_name(index: usize) -> String {
    format!("snap_{index:06}.nspnp")
}

/// Write every slice of the history into `dir` (created if missing).
pub fn checkpoint(history: &FieldHistory, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(history.len());
    for i in 0..history.len() {
        let p = dir.join(snapshot_name(i));
        write_state(&p, history.state(i), history.times()[i])?;
        paths.push(p);
    }
    Ok(paths)
}

/// Load a snapshot directory back into a history (sorted by file name).
pub fn restore(dir: &Path) -> Result<FieldHistory> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "nspnp").unwrap_or(false))
        .collect();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .nspnp snapshots in {}",
            dir.display()
        )));
    }
    files.sort();
    let mut history = FieldHistory::new();
    for f in &files {
        let (state, time) = read_state(f)?;
        history.push(time, state)?;
    }
    Ok(history)
}
