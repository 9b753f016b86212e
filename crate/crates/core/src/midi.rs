//! Standard MIDI File (format 0/1) reading and writing.
//!
//! Only what the pipeline needs: note on/off pairing into [`RawNote`]s with
//! tick positions, a tempo map, and a deterministic single-track writer.

use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("file contains no note events")]
    EmptyFile,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// A paired note with absolute tick onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawNote {
    pub pitch: u8,
    pub velocity: u8,
    pub onset_tick: i64,
    pub duration_ticks: i64,
}

/// Tempo change at an absolute tick, in microseconds per quarter note.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoEvent {
    pub tick: i64,
    pub us_per_qn: i64,
}

#[derive(Debug, Clone)]
pub struct SmfData {
    pub division: u16,
    pub notes: Vec<RawNote>,
    pub tempo_map: Vec<TempoEvent>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.bytes.len() {
            return Err(MidiError::Parse(format!(
                "unexpected end of file at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(MidiError::Parse("variable-length quantity too long".into()))
    }
}

/// Parse an SMF, pairing note-ons with the earliest matching note-off.
pub fn read_smf(path: &Path) -> Result<SmfData, MidiError> {
    let bytes = fs::read(path)?;
    parse_smf(&bytes)
}

pub fn parse_smf(bytes: &[u8]) -> Result<SmfData, MidiError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != b"MThd" {
        return Err(MidiError::Parse("missing MThd header".into()));
    }
    let hlen = r.u32()?;
    if hlen < 6 {
        return Err(MidiError::Parse("header chunk too short".into()));
    }
    let format = r.u16()?;
    let ntrks = r.u16()?;
    let division = r.u16()?;
    r.take(hlen as usize - 6)?;
    if format > 1 {
        return Err(MidiError::Parse(format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::Parse("SMPTE time division is not supported".into()));
    }
    if division == 0 {
        return Err(MidiError::Parse("zero ticks-per-quarter division".into()));
    }

    let mut notes = Vec::new();
    let mut tempo_map = vec![TempoEvent { tick: 0, us_per_qn: 500_000 }];

    for _ in 0..ntrks {
        if r.take(4)? != b"MTrk" {
            return Err(MidiError::Parse("missing MTrk chunk".into()));
        }
        let len = r.u32()? as usize;
        let end = r.pos + len;
        if end > bytes.len() {
            return Err(MidiError::Parse("track chunk exceeds file length".into()));
        }
        let mut tick: i64 = 0;
        let mut running: Option<u8> = None;
        // open note-ons per pitch, FIFO
        let mut open: Vec<Vec<(i64, u8)>> = vec![Vec::new(); 128];
        while r.pos < end {
            tick += r.vlq()? as i64;
            let first = r.u8()?;
            let status = if first & 0x80 != 0 {
                if first < 0xf0 {
                    running = Some(first);
                }
                first
            } else {
                r.pos -= 1;
                running.ok_or_else(|| {
                    MidiError::Parse("data byte without running status".into())
                })?
            };
            match status & 0xf0 {
                0x80 | 0x90 => {
                    let pitch = r.u8()? & 0x7f;
                    let vel = r.u8()? & 0x7f;
                    let is_on = status & 0xf0 == 0x90 && vel > 0;
                    if is_on {
                        open[pitch as usize].push((tick, vel));
                    } else if !open[pitch as usize].is_empty() {
                        let (onset, v) = open[pitch as usize].remove(0);
                        notes.push(RawNote {
                            pitch,
                            velocity: v,
                            onset_tick: onset,
                            duration_ticks: (tick - onset).max(1),
                        });
                    }
                }
                0xa0 | 0xb0 | 0xe0 => {
                    r.take(2)?;
                }
                0xc0 | 0xd0 => {
                    r.take(1)?;
                }
                0xf0 => match status {
                    0xff => {
                        let meta = r.u8()?;
                        let len = r.vlq()? as usize;
                        let data = r.take(len)?;
                        if meta == 0x51 && len == 3 {
                            let us = ((data[0] as i64) << 16) | ((data[1] as i64) << 8) | data[2] as i64;
                            tempo_map.push(TempoEvent { tick, us_per_qn: us });
                        }
                    }
                    0xf0 | 0xf7 => {
                        let len = r.vlq()? as usize;
                        r.take(len)?;
                    }
                    other => {
                        return Err(MidiError::Parse(format!(
                            "unexpected status byte {other:#04x}"
                        )));
                    }
                },
                _ => unreachable!(),
            }
        }
        if r.pos != end {
            return Err(MidiError::Parse("event ran past end of track chunk".into()));
        }
        // orphan note-ons: close at end of track with 1-tick duration
        for pitch in 0..128u8 {
            for &(onset, v) in &open[pitch as usize] {
                notes.push(RawNote {
                    pitch,
                    velocity: v,
                    onset_tick: onset,
                    duration_ticks: 1,
                });
            }
        }
    }

    if notes.is_empty() {
        return Err(MidiError::EmptyFile);
    }
    notes.sort_by_key(|n| (n.onset_tick, n.pitch));
    // stable sort; a tempo event read from the file replaces the implicit
    // default at the same tick
    tempo_map.sort_by_key(|t| t.tick);
    let mut deduped: Vec<TempoEvent> = Vec::new();
    for ev in tempo_map {
        if deduped.last().map(|l| l.tick) == Some(ev.tick) {
            deduped.pop();
        }
        deduped.push(ev);
    }
    Ok(SmfData {
        division,
        notes,
        tempo_map: deduped,
    })
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (v & 0x7f) as u8;
        v >>= 7;
        n += 1;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(stack[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Serialize notes as a format-0 file at a fixed tempo.
///
/// Events are ordered by tick with note-offs before note-ons, then by pitch,
/// so output bytes are a pure function of the input.
pub fn write_smf(
    path: &Path,
    division: u16,
    us_per_qn: i64,
    notes: &[RawNote],
) -> Result<(), MidiError> {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Ev {
        tick: i64,
        kind: u8, // 0 = off, 1 = on
        pitch: u8,
        velocity: u8,
    }
    let mut evs = Vec::with_capacity(notes.len() * 2);
    for n in notes {
        evs.push(Ev {
            tick: n.onset_tick,
            kind: 1,
            pitch: n.pitch,
            velocity: n.velocity,
        });
        evs.push(Ev {
            tick: n.onset_tick + n.duration_ticks,
            kind: 0,
            pitch: n.pitch,
            velocity: 0,
        });
    }
    evs.sort();

    let mut track = Vec::new();
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x51, 0x03]);
    track.extend_from_slice(&[
        ((us_per_qn >> 16) & 0xff) as u8,
        ((us_per_qn >> 8) & 0xff) as u8,
        (us_per_qn & 0xff) as u8,
    ]);
    let mut prev = 0i64;
    for e in &evs {
        push_vlq(&mut track, (e.tick - prev) as u32);
        prev = e.tick;
        if e.kind == 1 {
            track.extend_from_slice(&[0x90, e.pitch, e.velocity]);
        } else {
            track.extend_from_slice(&[0x80, e.pitch, 0]);
        }
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn write_then_read_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.mid");
        let notes = vec![
            RawNote { pitch: 60, velocity: 100, onset_tick: 0, duration_ticks: 240 },
            RawNote { pitch: 64, velocity: 100, onset_tick: 240, duration_ticks: 240 },
            RawNote { pitch: 67, velocity: 100, onset_tick: 480, duration_ticks: 480 },
        ];
        write_smf(&path, 480, 500_000, &notes).unwrap();
        let smf = read_smf(&path).unwrap();
        assert_eq!(smf.division, 480);
        assert_eq!(smf.notes, notes);
        assert_eq!(smf.tempo_map, vec![TempoEvent { tick: 0, us_per_qn: 500_000 }]);
    }

    #[test]
    fn truncated_header_is_parse_error() {
        let err = parse_smf(b"MTh").unwrap_err();
        assert!(matches!(err, MidiError::Parse(_)));
    }

    #[test]
    fn no_notes_is_empty_file_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.mid");
        write_smf(&path, 480, 500_000, &[]).unwrap();
        let err = read_smf(&path).unwrap_err();
        assert!(matches!(err, MidiError::EmptyFile));
    }

    #[test]
    fn running_status_and_vel_zero_off() {
        // one track: note on 60, running-status note on 64, vel-0 offs
        let mut track = Vec::new();
        track.extend_from_slice(&[0x00, 0x90, 60, 100]);
        track.extend_from_slice(&[0x60, 64, 100]); // running status
        track.extend_from_slice(&[0x60, 60, 0]); // vel 0 == off
        track.extend_from_slice(&[0x00, 64, 0]);
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&96u16.to_be_bytes());
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&track);
        let smf = parse_smf(&bytes).unwrap();
        assert_eq!(smf.notes.len(), 2);
        assert_eq!(smf.notes[0].pitch, 60);
        assert_eq!(smf.notes[0].duration_ticks, 0xc0);
        assert_eq!(smf.notes[1].pitch, 64);
        assert_eq!(smf.notes[1].onset_tick, 0x60);
    }

    #[test]
    fn tempo_change_recorded() {
        let mut track = Vec::new();
        track.extend_from_slice(&[0x00, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40]); // 1_000_000 us/qn
        track.extend_from_slice(&[0x00, 0x90, 60, 100]);
        track.extend_from_slice(&[0x60, 0x80, 60, 0]);
        track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&96u16.to_be_bytes());
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(track.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&track);
        let smf = parse_smf(&bytes).unwrap();
        assert_eq!(smf.tempo_map.last().unwrap().us_per_qn, 1_000_000);
    }
}
