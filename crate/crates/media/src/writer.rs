//! Non-fragmented MP4/M4A writer.
//!
//! Layout: `ftyp`, `moov`, `mdat`. The movie box precedes the media data so
//! players can start without seeking. Chunk offsets are 32-bit unless the
//! media data ends beyond 4 GiB, in which case every track switches to
//! `co64` and `mdat` uses the large-size header.

use std::cmp::Ordering;
use std::time::Duration;

use crate::boxes::BoxBuf;
use crate::error::{MediaError, MediaResult};
use crate::track::{MediaTrack, TrackKind};

/// Movie timescale used when the least common multiple of the track
/// timescales does not fit in 32 bits.
const FALLBACK_MOVIE_TIMESCALE: u32 = 1000;

const ISO_LANGUAGE_UND: u16 = 0x55c4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Brand {
    /// `isom` with the usual MP4 compatible brands.
    Mp4,
    /// `M4A ` audio-only file.
    M4a,
}

impl Brand {
    pub fn major(&self) -> [u8; 4] {
        match self {
            Brand::Mp4 => *b"isom",
            Brand::M4a => *b"M4A ",
        }
    }

    fn minor_version(&self) -> u32 {
        match self {
            Brand::Mp4 => 0x200,
            Brand::M4a => 0,
        }
    }

    fn compatible(&self) -> &'static [&'static [u8; 4]] {
        match self {
            Brand::Mp4 => &[b"isom", b"iso2", b"avc1", b"mp41"],
            Brand::M4a => &[b"M4A ", b"mp42", b"isom"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    /// Upper bound on the span of decode times stored in one chunk. Chunks
    /// from different tracks are stored in start-time order, so this also
    /// bounds how far apart consecutively stored samples can be.
    pub interleave_window: Duration,
    /// Emit `co64` and a large-size `mdat` header even for small files.
    pub force_64bit_offsets: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            interleave_window: crate::mux::DEFAULT_INTERLEAVE_WINDOW,
            force_64bit_offsets: false,
        }
    }
}

/// Writes a single-track MP4 file.
pub fn write_mp4(track: &MediaTrack) -> MediaResult<Vec<u8>> {
    track.validate()?;
    write_container(std::slice::from_ref(track), Brand::Mp4, WriteOptions::default())
}

/// Writes a single-track audio file with the `M4A ` brand.
pub fn write_m4a(track: &MediaTrack) -> MediaResult<Vec<u8>> {
    if !track.kind.is_audio() {
        return Err(MediaError::WrongKind);
    }
    track.validate()?;
    write_container(std::slice::from_ref(track), Brand::M4a, WriteOptions::default())
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    track: usize,
    first_sample: usize,
    count: usize,
    bytes: u64,
    start_dts: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn movie_timescale(tracks: &[MediaTrack]) -> u32 {
    let mut lcm: u64 = 1;
    for t in tracks {
        let ts = u64::from(t.timescale);
        lcm = lcm / gcd(lcm, ts) * ts;
        if lcm > u64::from(u32::MAX) {
            return FALLBACK_MOVIE_TIMESCALE;
        }
    }
    lcm as u32
}

/// Converts ticks between timescales, rounding to nearest.
pub(crate) fn rescale(ticks: u64, from: u32, to: u32) -> u64 {
    let num = u128::from(ticks) * u128::from(to);
    let den = u128::from(from);
    ((num + den / 2) / den) as u64
}

fn split_chunks(index: usize, track: &MediaTrack, window: Duration) -> Vec<Chunk> {
    let window_ns = window.as_nanos();
    let ts = u128::from(track.timescale);
    let mut chunks: Vec<Chunk> = Vec::new();
    for (i, s) in track.samples.iter().enumerate() {
        let len = s.payload.len() as u64;
        match chunks.last_mut() {
            Some(c) if u128::from(s.dts - c.start_dts) * 1_000_000_000 < window_ns * ts => {
                c.count += 1;
                c.bytes += len;
            }
            _ => chunks.push(Chunk {
                track: index,
                first_sample: i,
                count: 1,
                bytes: len,
                start_dts: s.dts,
            }),
        }
    }
    chunks
}

fn chunk_order(tracks: &[MediaTrack], a: &Chunk, b: &Chunk) -> Ordering {
    let ta = u128::from(tracks[a.track].timescale);
    let tb = u128::from(tracks[b.track].timescale);
    (u128::from(a.start_dts) * tb)
        .cmp(&(u128::from(b.start_dts) * ta))
        .then(a.track.cmp(&b.track))
        .then(a.first_sample.cmp(&b.first_sample))
}

/// Writes any number of pre-validated tracks into one file. Track ids are
/// assigned densely from 1 in slice order.
pub(crate) fn write_container(
    tracks: &[MediaTrack],
    brand: Brand,
    options: WriteOptions,
) -> MediaResult<Vec<u8>> {
    if tracks.is_empty() {
        return Err(MediaError::EmptyTrack);
    }
    for t in tracks {
        t.validate()?;
    }

    let mut chunks: Vec<Chunk> = tracks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| split_chunks(i, t, options.interleave_window))
        .collect();
    chunks.sort_by(|a, b| chunk_order(tracks, a, b));

    let payload_len: u64 = chunks.iter().map(|c| c.bytes).sum();

    let ftyp = ftyp_box(brand);
    let relative = relative_offsets(&chunks);
    let mut use_co64 = options.force_64bit_offsets;
    let mut large_mdat = options.force_64bit_offsets || payload_len + 8 > u64::from(u32::MAX);

    // The movie box size depends on the offset width, and the offsets depend
    // on the movie box size; settle the width first, then emit for real.
    let mut moov_len = moov_box(tracks, &chunks, &relative, 0, use_co64).len() as u64;
    let mdat_header = |large: bool| if large { 16u64 } else { 8 };
    let mut data_start = ftyp.len() as u64 + moov_len + mdat_header(large_mdat);
    if !use_co64 && data_start + payload_len > u64::from(u32::MAX) {
        use_co64 = true;
        large_mdat = large_mdat || payload_len + 8 > u64::from(u32::MAX);
        moov_len = moov_box(tracks, &chunks, &relative, 0, use_co64).len() as u64;
        data_start = ftyp.len() as u64 + moov_len + mdat_header(large_mdat);
    }
    let moov = moov_box(tracks, &chunks, &relative, data_start, use_co64);
    debug_assert_eq!(moov.len() as u64, moov_len);

    let total = data_start + payload_len;
    let mut out = Vec::with_capacity(usize::try_from(total).unwrap_or(0));
    out.extend_from_slice(&ftyp);
    out.extend_from_slice(&moov);
    if large_mdat {
        out.extend_from_slice(&1u32.to_be_bytes());
        out.extend_from_slice(b"mdat");
        out.extend_from_slice(&(payload_len + 16).to_be_bytes());
    } else {
        out.extend_from_slice(&((payload_len + 8) as u32).to_be_bytes());
        out.extend_from_slice(b"mdat");
    }
    for c in &chunks {
        let t = &tracks[c.track];
        for s in &t.samples[c.first_sample..c.first_sample + c.count] {
            out.extend_from_slice(&s.payload);
        }
    }
    Ok(out)
}

/// Offset of each chunk from the start of the media data payload, indexed
/// like `chunks`.
fn relative_offsets(chunks: &[Chunk]) -> Vec<u64> {
    let mut at = 0;
    chunks
        .iter()
        .map(|c| {
            let here = at;
            at += c.bytes;
            here
        })
        .collect()
}

fn ftyp_box(brand: Brand) -> Vec<u8> {
    let mut b = BoxBuf::new();
    b.begin(b"ftyp");
    b.bytes(&brand.major());
    b.u32(brand.minor_version());
    for c in brand.compatible() {
        b.bytes(*c);
    }
    b.end();
    b.into_inner()
}

fn moov_box(
    tracks: &[MediaTrack],
    chunks: &[Chunk],
    relative: &[u64],
    data_start: u64,
    co64: bool,
) -> Vec<u8> {
    let mts = movie_timescale(tracks);
    let movie_duration = tracks
        .iter()
        .map(|t| rescale(t.end_ticks(), t.timescale, mts))
        .max()
        .unwrap_or(0);

    let mut b = BoxBuf::new();
    b.begin(b"moov");
    mvhd(&mut b, mts, movie_duration, tracks.len() as u32 + 1);
    for (index, track) in tracks.iter().enumerate() {
        let offsets: Vec<(u64, usize)> = chunks
            .iter()
            .zip(relative)
            .filter(|(c, _)| c.track == index)
            .map(|(c, rel)| (data_start + rel, c.count))
            .collect();
        trak(&mut b, track, index as u32 + 1, mts, &offsets, co64);
    }
    b.end();
    b.into_inner()
}

fn mvhd(b: &mut BoxBuf, timescale: u32, duration: u64, next_track_id: u32) {
    let v1 = duration > u64::from(u32::MAX);
    b.begin_full(b"mvhd", u8::from(v1), 0);
    if v1 {
        b.u64(0);
        b.u64(0);
        b.u32(timescale);
        b.u64(duration);
    } else {
        b.u32(0);
        b.u32(0);
        b.u32(timescale);
        b.u32(duration as u32);
    }
    b.u32(0x0001_0000); // rate 1.0
    b.u16(0x0100); // volume 1.0
    b.zeros(10);
    b.unity_matrix();
    b.zeros(24); // pre_defined
    b.u32(next_track_id);
    b.end();
}

fn trak(
    b: &mut BoxBuf,
    track: &MediaTrack,
    track_id: u32,
    movie_ts: u32,
    chunk_offsets: &[(u64, usize)],
    co64: bool,
) {
    let track_end = rescale(track.end_ticks(), track.timescale, movie_ts);
    b.begin(b"trak");

    let v1 = track_end > u64::from(u32::MAX);
    b.begin_full(b"tkhd", u8::from(v1), 0x3);
    if v1 {
        b.u64(0);
        b.u64(0);
        b.u32(track_id);
        b.u32(0);
        b.u64(track_end);
    } else {
        b.u32(0);
        b.u32(0);
        b.u32(track_id);
        b.u32(0);
        b.u32(track_end as u32);
    }
    b.zeros(8);
    b.u16(0); // layer
    b.u16(0); // alternate group
    b.u16(if track.kind.is_audio() { 0x0100 } else { 0 });
    b.u16(0);
    b.unity_matrix();
    match track.kind {
        TrackKind::VideoH264 { width, height } => {
            b.u32(u32::from(width) << 16);
            b.u32(u32::from(height) << 16);
        }
        TrackKind::AudioAac { .. } => {
            b.u32(0);
            b.u32(0);
        }
    }
    b.end();

    let offset = track.start_offset();
    if offset > 0 {
        let empty = rescale(offset, track.timescale, movie_ts);
        let media = rescale(track.media_duration(), track.timescale, movie_ts);
        let v1 = empty.max(media) > u64::from(u32::MAX);
        b.begin(b"edts");
        b.begin_full(b"elst", u8::from(v1), 0);
        b.u32(2);
        for (segment, media_time) in [(empty, -1i64), (media, 0)] {
            if v1 {
                b.u64(segment);
                b.i64(media_time);
            } else {
                b.u32(segment as u32);
                b.i32(media_time as i32);
            }
            b.u16(1);
            b.u16(0);
        }
        b.end();
        b.end();
    }

    b.begin(b"mdia");
    let media_duration = track.media_duration();
    let v1 = media_duration > u64::from(u32::MAX);
    b.begin_full(b"mdhd", u8::from(v1), 0);
    if v1 {
        b.u64(0);
        b.u64(0);
        b.u32(track.timescale);
        b.u64(media_duration);
    } else {
        b.u32(0);
        b.u32(0);
        b.u32(track.timescale);
        b.u32(media_duration as u32);
    }
    b.u16(ISO_LANGUAGE_UND);
    b.u16(0);
    b.end();

    b.begin_full(b"hdlr", 0, 0);
    b.u32(0);
    b.bytes(if track.kind.is_video() { b"vide" } else { b"soun" });
    b.zeros(12);
    b.bytes(track.label.as_str().as_bytes());
    b.u8(0);
    b.end();

    b.begin(b"minf");
    if track.kind.is_video() {
        b.begin_full(b"vmhd", 0, 1);
        b.zeros(8);
        b.end();
    } else {
        b.begin_full(b"smhd", 0, 0);
        b.zeros(4);
        b.end();
    }
    b.begin(b"dinf");
    b.begin_full(b"dref", 0, 0);
    b.u32(1);
    b.begin_full(b"url ", 0, 1);
    b.end();
    b.end();
    b.end();

    stbl(b, track, track_id, chunk_offsets, co64);
    b.end(); // minf
    b.end(); // mdia
    b.end(); // trak
}

fn stbl(b: &mut BoxBuf, track: &MediaTrack, track_id: u32, chunk_offsets: &[(u64, usize)], co64: bool) {
    b.begin(b"stbl");

    b.begin_full(b"stsd", 0, 0);
    b.u32(1);
    match track.kind {
        TrackKind::VideoH264 { width, height } => {
            b.begin(b"avc1");
            b.zeros(6);
            b.u16(1); // data reference index
            b.zeros(16);
            b.u16(width);
            b.u16(height);
            b.u32(0x0048_0000);
            b.u32(0x0048_0000);
            b.u32(0);
            b.u16(1); // frame count
            b.zeros(32); // compressor name
            b.u16(0x0018);
            b.u16(0xffff);
            b.begin(b"avcC");
            b.bytes(&track.codec_config);
            b.end();
            b.end();
        }
        TrackKind::AudioAac { channels } => {
            b.begin(b"mp4a");
            b.zeros(6);
            b.u16(1);
            b.zeros(8);
            b.u16(channels);
            b.u16(16);
            b.u16(0);
            b.u16(0);
            b.u32(if track.timescale <= 0xffff { track.timescale << 16 } else { 0 });
            esds(b, track_id, &track.codec_config);
            b.end();
        }
    }
    b.end();

    // Decoding times, run-length encoded.
    let mut stts: Vec<(u32, u32)> = Vec::new();
    for s in &track.samples {
        match stts.last_mut() {
            Some((count, delta)) if *delta == s.duration => *count += 1,
            _ => stts.push((1, s.duration)),
        }
    }
    b.begin_full(b"stts", 0, 0);
    b.u32(stts.len() as u32);
    for (count, delta) in stts {
        b.u32(count);
        b.u32(delta);
    }
    b.end();

    if track.kind.is_video() {
        b.begin_full(b"stss", 0, 0);
        let sync: Vec<u32> = track
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.keyframe)
            .map(|(i, _)| i as u32 + 1)
            .collect();
        b.u32(sync.len() as u32);
        for n in sync {
            b.u32(n);
        }
        b.end();
    }

    let mut stsc: Vec<(u32, u32)> = Vec::new();
    for (i, &(_, count)) in chunk_offsets.iter().enumerate() {
        if stsc.last().map(|&(_, c)| c) != Some(count as u32) {
            stsc.push((i as u32 + 1, count as u32));
        }
    }
    b.begin_full(b"stsc", 0, 0);
    b.u32(stsc.len() as u32);
    for (first, per_chunk) in stsc {
        b.u32(first);
        b.u32(per_chunk);
        b.u32(1);
    }
    b.end();

    b.begin_full(b"stsz", 0, 0);
    let first_len = track.samples[0].payload.len();
    if track.samples.iter().all(|s| s.payload.len() == first_len) {
        b.u32(first_len as u32);
        b.u32(track.samples.len() as u32);
    } else {
        b.u32(0);
        b.u32(track.samples.len() as u32);
        for s in &track.samples {
            b.u32(s.payload.len() as u32);
        }
    }
    b.end();

    if co64 {
        b.begin_full(b"co64", 0, 0);
        b.u32(chunk_offsets.len() as u32);
        for &(off, _) in chunk_offsets {
            b.u64(off);
        }
    } else {
        b.begin_full(b"stco", 0, 0);
        b.u32(chunk_offsets.len() as u32);
        for &(off, _) in chunk_offsets {
            b.u32(off as u32);
        }
    }
    b.end();

    b.end();
}

fn esds(b: &mut BoxBuf, track_id: u32, dsi: &[u8]) {
    use crate::boxes::descriptor_len;

    let mut dsi_desc = vec![0x05];
    dsi_desc.extend(descriptor_len(dsi.len()));
    dsi_desc.extend_from_slice(dsi);

    let mut dcd_body = vec![0x40, 0x15, 0, 0, 0];
    dcd_body.extend_from_slice(&0u32.to_be_bytes()); // max bitrate
    dcd_body.extend_from_slice(&0u32.to_be_bytes()); // avg bitrate
    dcd_body.extend(dsi_desc);
    let mut dcd = vec![0x04];
    dcd.extend(descriptor_len(dcd_body.len()));
    dcd.extend(dcd_body);

    let mut es_body = Vec::new();
    es_body.extend_from_slice(&(track_id as u16).to_be_bytes());
    es_body.push(0);
    es_body.extend(dcd);
    es_body.extend_from_slice(&[0x06, 0x01, 0x02]);
    let mut es = vec![0x03];
    es.extend(descriptor_len(es_body.len()));
    es.extend(es_body);

    b.begin_full(b"esds", 0, 0);
    b.bytes(&es);
    b.end();
}
