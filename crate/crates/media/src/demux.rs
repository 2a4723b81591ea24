//! Box-tree parser that reconstructs tracks from a non-fragmented MP4.
//!
//! Unknown boxes are skipped by their declared size at every level. Any
//! structural problem is reported as [`MediaError::ParseFailure`] carrying
//! the absolute byte offset and the slash-separated path of the box being
//! read.

use std::ops::Range;
use std::time::Duration;

use crate::boxes::{fourcc_str, FourCc, Reader, Short};
use crate::error::{MediaError, MediaResult};
use crate::track::{MediaTrack, Sample, TrackKind, TrackLabel};
use crate::writer::rescale;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mp4File {
    pub brand: [u8; 4],
    pub compatible_brands: Vec<[u8; 4]>,
    pub movie_timescale: u32,
    /// Declared movie duration in `movie_timescale` ticks.
    pub movie_duration: u64,
    /// Tracks ordered by track id; ids are dense from 1.
    pub tracks: Vec<MediaTrack>,
    pub interleave_window: Duration,
}

impl Mp4File {
    /// Longest track presentation, in seconds.
    pub fn duration_secs(&self) -> f64 {
        self.tracks
            .iter()
            .map(|t| t.end_ticks() as f64 / f64::from(t.timescale))
            .fold(0.0, f64::max)
    }

    pub fn brand_str(&self) -> String {
        fourcc_str(&self.brand)
    }
}

/// Where one chunk of one track lives in the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkExtent {
    pub track_id: u32,
    pub offset: u64,
    pub len: u64,
    pub first_sample: usize,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerLayout {
    /// Byte range of the media data payload (after the `mdat` header).
    pub mdat: Range<u64>,
    /// All chunks of all tracks, sorted by file offset.
    pub chunks: Vec<ChunkExtent>,
    pub uses_co64: bool,
}

/// Parses `file` into its tracks.
pub fn demux(file: &[u8]) -> MediaResult<Mp4File> {
    inspect(file).map(|(f, _)| f)
}

/// Parses `file` and also reports the physical chunk layout.
pub fn inspect(file: &[u8]) -> MediaResult<(Mp4File, ContainerLayout)> {
    let mut top = Reader::new(file, 0);
    let mut ftyp = None;
    let mut moov = None;
    let mut mdat: Option<Range<u64>> = None;
    while let Some(b) = next_box(&mut top, "")? {
        match &b.kind {
            b"ftyp" => ftyp = Some(b),
            b"moov" => moov = Some(b),
            b"mdat" => mdat = Some(b.body_base..b.body_base + b.body.len() as u64),
            _ => {}
        }
    }

    let ftyp = ftyp.ok_or_else(|| MediaError::parse(0, "ftyp", "missing file type box"))?;
    let (brand, compatible_brands) = parse_ftyp(&ftyp)?;
    let moov = moov.ok_or_else(|| MediaError::parse(file.len() as u64, "moov", "missing movie box"))?;
    let mdat = mdat.ok_or_else(|| MediaError::parse(file.len() as u64, "mdat", "missing media data box"))?;

    let mut movie_timescale = 0;
    let mut movie_duration = 0;
    let mut traks = Vec::new();
    let mut r = moov.reader();
    while let Some(b) = next_box(&mut r, "moov")? {
        match &b.kind {
            b"mvhd" => {
                let path = "moov/mvhd";
                let mut h = b.reader();
                let version = h.u8().map_err(short(path))?;
                h.skip(3).map_err(short(path))?;
                if version == 1 {
                    h.skip(16).map_err(short(path))?;
                    movie_timescale = h.u32().map_err(short(path))?;
                    movie_duration = h.u64().map_err(short(path))?;
                } else {
                    h.skip(8).map_err(short(path))?;
                    movie_timescale = h.u32().map_err(short(path))?;
                    movie_duration = u64::from(h.u32().map_err(short(path))?);
                }
            }
            b"trak" => traks.push(b),
            _ => {}
        }
    }
    if movie_timescale == 0 {
        return Err(MediaError::parse(moov.start, "moov/mvhd", "missing or zero movie timescale"));
    }

    let mut parsed = Vec::new();
    for trak in &traks {
        parsed.push(parse_trak(trak, file, movie_timescale)?);
    }
    parsed.sort_by_key(|t| t.track_id);
    for (i, t) in parsed.iter().enumerate() {
        if t.track_id != i as u32 + 1 {
            return Err(MediaError::parse(
                moov.start,
                "moov/trak/tkhd",
                format!("track ids are not dense from 1 (found {})", t.track_id),
            ));
        }
    }

    let uses_co64 = parsed.iter().any(|t| t.co64);
    let mut chunks: Vec<ChunkExtent> = parsed.iter().flat_map(|t| t.chunks.iter().copied()).collect();
    chunks.sort_by_key(|c| c.offset);

    Ok((
        Mp4File {
            brand,
            compatible_brands,
            movie_timescale,
            movie_duration,
            tracks: parsed.into_iter().map(|t| t.track).collect(),
            interleave_window: crate::mux::DEFAULT_INTERLEAVE_WINDOW,
        },
        ContainerLayout {
            mdat,
            chunks,
            uses_co64,
        },
    ))
}

struct RawBox<'a> {
    kind: FourCc,
    start: u64,
    body: &'a [u8],
    body_base: u64,
    path: String,
}

impl<'a> RawBox<'a> {
    fn reader(&self) -> Reader<'a> {
        Reader::new(self.body, self.body_base)
    }
}

fn short(path: &str) -> impl Fn(Short) -> MediaError + '_ {
    move |s| MediaError::parse(s.offset, path, "box body ends early")
}

fn join(parent: &str, kind: &FourCc) -> String {
    if parent.is_empty() {
        fourcc_str(kind)
    } else {
        format!("{parent}/{}", fourcc_str(kind))
    }
}

fn next_box<'a>(r: &mut Reader<'a>, parent: &str) -> MediaResult<Option<RawBox<'a>>> {
    if r.remaining() == 0 {
        return Ok(None);
    }
    let start = r.offset();
    let here = if parent.is_empty() { "<root>" } else { parent };
    if r.remaining() < 8 {
        return Err(MediaError::parse(start, here, "truncated box header"));
    }
    let size32 = r.u32().map_err(short(here))?;
    let kind = r.fourcc().map_err(short(here))?;
    let path = join(parent, &kind);
    let (size, header) = match size32 {
        0 => ((r.remaining() + 8) as u64, 8u64),
        1 => {
            let large = r.u64().map_err(|s| MediaError::parse(s.offset, &path, "truncated large size"))?;
            (large, 16)
        }
        n => (u64::from(n), 8),
    };
    if size < header {
        return Err(MediaError::parse(start, path, format!("declared size {size} is smaller than its header")));
    }
    let body_len = size - header;
    if body_len > r.remaining() as u64 {
        return Err(MediaError::parse(
            start,
            path,
            format!("box declares {size} bytes but only {} remain", r.remaining() as u64 + header),
        ));
    }
    let body_base = r.offset();
    let body = r.take(body_len as usize).map_err(short(here))?;
    Ok(Some(RawBox {
        kind,
        start,
        body,
        body_base,
        path,
    }))
}

fn parse_ftyp(b: &RawBox) -> MediaResult<([u8; 4], Vec<[u8; 4]>)> {
    let mut r = b.reader();
    let brand = r.fourcc().map_err(short(&b.path))?;
    r.u32().map_err(short(&b.path))?;
    let mut compatible = Vec::new();
    while r.remaining() >= 4 {
        compatible.push(r.fourcc().map_err(short(&b.path))?);
    }
    Ok((brand, compatible))
}

struct ParsedTrak {
    track_id: u32,
    track: MediaTrack,
    chunks: Vec<ChunkExtent>,
    co64: bool,
}

#[derive(Default)]
struct TrakBoxes<'a> {
    track_id: Option<u32>,
    empty_edit: u64,
    timescale: Option<u32>,
    handler: Option<FourCc>,
    name: String,
    stsd: Option<RawBox<'a>>,
    stts: Option<RawBox<'a>>,
    stsc: Option<RawBox<'a>>,
    stsz: Option<RawBox<'a>>,
    stco: Option<RawBox<'a>>,
    stss: Option<RawBox<'a>>,
}

fn collect_trak<'a>(b: RawBox<'a>, parts: &mut TrakBoxes<'a>) -> MediaResult<()> {
    let mut r = b.reader();
    while let Some(child) = next_box(&mut r, &b.path)? {
        let path = child.path.clone();
        match &child.kind {
            b"tkhd" => {
                let mut h = child.reader();
                let version = h.u8().map_err(short(&path))?;
                h.skip(3 + if version == 1 { 16 } else { 8 }).map_err(short(&path))?;
                parts.track_id = Some(h.u32().map_err(short(&path))?);
            }
            b"elst" => {
                let mut h = child.reader();
                let version = h.u8().map_err(short(&path))?;
                h.skip(3).map_err(short(&path))?;
                let count = h.u32().map_err(short(&path))?;
                if count > 0 {
                    let (segment, media_time) = if version == 1 {
                        (h.u64().map_err(short(&path))?, h.i64().map_err(short(&path))?)
                    } else {
                        (
                            u64::from(h.u32().map_err(short(&path))?),
                            i64::from(h.i32().map_err(short(&path))?),
                        )
                    };
                    if media_time == -1 {
                        parts.empty_edit = segment;
                    }
                }
            }
            b"mdhd" => {
                let mut h = child.reader();
                let version = h.u8().map_err(short(&path))?;
                h.skip(3 + if version == 1 { 16 } else { 8 }).map_err(short(&path))?;
                parts.timescale = Some(h.u32().map_err(short(&path))?);
            }
            b"hdlr" => {
                let mut h = child.reader();
                h.skip(8).map_err(short(&path))?;
                parts.handler = Some(h.fourcc().map_err(short(&path))?);
                h.skip(12).map_err(short(&path))?;
                let raw = h.rest();
                let end = raw.iter().position(|&c| c == 0).unwrap_or(raw.len());
                parts.name = String::from_utf8_lossy(&raw[..end]).into_owned();
            }
            b"edts" | b"mdia" | b"minf" | b"stbl" => collect_trak(child, parts)?,
            b"stsd" => parts.stsd = Some(child),
            b"stts" => parts.stts = Some(child),
            b"stsc" => parts.stsc = Some(child),
            b"stsz" => parts.stsz = Some(child),
            b"stco" | b"co64" => parts.stco = Some(child),
            b"stss" => parts.stss = Some(child),
            _ => {}
        }
    }
    Ok(())
}

fn required<'a, 'b>(b: &'b Option<RawBox<'a>>, trak: &RawBox, name: &str) -> MediaResult<&'b RawBox<'a>> {
    b.as_ref()
        .ok_or_else(|| MediaError::parse(trak.start, format!("{}/{name}", trak.path), "required box missing"))
}

fn parse_trak(trak: &RawBox, file: &[u8], movie_timescale: u32) -> MediaResult<ParsedTrak> {
    let mut parts = TrakBoxes::default();
    let trak_copy = RawBox {
        kind: trak.kind,
        start: trak.start,
        body: trak.body,
        body_base: trak.body_base,
        path: trak.path.clone(),
    };
    collect_trak(trak_copy, &mut parts)?;

    let track_id = parts
        .track_id
        .ok_or_else(|| MediaError::parse(trak.start, "moov/trak/tkhd", "required box missing"))?;
    let timescale = parts
        .timescale
        .filter(|&t| t > 0)
        .ok_or_else(|| MediaError::parse(trak.start, "moov/trak/mdia/mdhd", "missing or zero timescale"))?;

    let stsd = required(&parts.stsd, trak, "stsd")?;
    let (kind, codec_config) = parse_stsd(stsd)?;
    match (&kind, parts.handler.as_ref()) {
        (TrackKind::VideoH264 { .. }, Some(b"vide")) | (TrackKind::AudioAac { .. }, Some(b"soun")) => {}
        _ => {
            return Err(MediaError::parse(
                stsd.start,
                &stsd.path,
                "sample entry does not match the handler type",
            ))
        }
    }

    let sizes = parse_stsz(required(&parts.stsz, trak, "stsz")?, file.len())?;
    let count = sizes.len();
    let durations = parse_stts(required(&parts.stts, trak, "stts")?, count)?;
    let stco = required(&parts.stco, trak, "stco")?;
    let co64 = &stco.kind == b"co64";
    let offsets = parse_stco(stco)?;
    let per_chunk = parse_stsc(required(&parts.stsc, trak, "stsc")?, offsets.len(), count)?;
    let sync = match &parts.stss {
        Some(b) => Some(parse_stss(b, count)?),
        None => None,
    };

    let start = if parts.empty_edit > 0 {
        rescale(parts.empty_edit, movie_timescale, timescale)
    } else {
        0
    };

    let mut samples = Vec::with_capacity(count);
    let mut chunks = Vec::with_capacity(offsets.len());
    let mut index = 0;
    let mut dts = start;
    for (&chunk_offset, &n) in offsets.iter().zip(&per_chunk) {
        let mut at = chunk_offset;
        for _ in 0..n {
            let len = u64::from(sizes[index]);
            let end = at.checked_add(len).filter(|&e| e <= file.len() as u64).ok_or_else(|| {
                MediaError::parse(at, &stco.path, "sample data lies outside the file")
            })?;
            samples.push(Sample {
                payload: file[at as usize..end as usize].to_vec(),
                dts,
                duration: durations[index],
                keyframe: sync.as_ref().map_or(true, |s| s[index]),
            });
            dts += u64::from(durations[index]);
            at = end;
            index += 1;
        }
        chunks.push(ChunkExtent {
            track_id,
            offset: chunk_offset,
            len: at - chunk_offset,
            first_sample: index - n,
            sample_count: n,
        });
    }

    let label = TrackLabel::parse(&parts.name).unwrap_or(if kind.is_video() {
        TrackLabel::Video
    } else {
        TrackLabel::Mic
    });

    Ok(ParsedTrak {
        track_id,
        track: MediaTrack {
            kind,
            timescale,
            samples,
            codec_config,
            label,
        },
        chunks,
        co64,
    })
}

fn full_header(r: &mut Reader, path: &str) -> MediaResult<u32> {
    r.u32().map_err(short(path))
}

fn parse_stsd(b: &RawBox) -> MediaResult<(TrackKind, Vec<u8>)> {
    let mut r = b.reader();
    full_header(&mut r, &b.path)?;
    let entries = r.u32().map_err(short(&b.path))?;
    if entries == 0 {
        return Err(MediaError::parse(b.start, &b.path, "no sample entries"));
    }
    let entry = next_box(&mut r, &b.path)?
        .ok_or_else(|| MediaError::parse(b.start, &b.path, "no sample entries"))?;
    let path = entry.path.clone();
    let mut e = entry.reader();
    match &entry.kind {
        b"avc1" | b"avc3" => {
            e.skip(6 + 2 + 16).map_err(short(&path))?;
            let width = e.u16().map_err(short(&path))?;
            let height = e.u16().map_err(short(&path))?;
            e.skip(4 + 4 + 4 + 2 + 32 + 2 + 2).map_err(short(&path))?;
            let mut config = None;
            while let Some(child) = next_box(&mut e, &path)? {
                if &child.kind == b"avcC" {
                    config = Some(child.body.to_vec());
                }
            }
            let config = config.ok_or_else(|| MediaError::parse(entry.start, format!("{path}/avcC"), "required box missing"))?;
            Ok((TrackKind::VideoH264 { width, height }, config))
        }
        b"mp4a" => {
            e.skip(6 + 2 + 8).map_err(short(&path))?;
            let channels = e.u16().map_err(short(&path))?;
            e.skip(2 + 2 + 2 + 4).map_err(short(&path))?;
            let mut config = None;
            while let Some(child) = next_box(&mut e, &path)? {
                if &child.kind == b"esds" {
                    config = Some(parse_esds(&child)?);
                }
            }
            let config = config.ok_or_else(|| MediaError::parse(entry.start, format!("{path}/esds"), "required box missing"))?;
            Ok((TrackKind::AudioAac { channels }, config))
        }
        other => Err(MediaError::parse(
            entry.start,
            &path,
            format!("unsupported sample entry `{}`", fourcc_str(other)),
        )),
    }
}

fn read_descriptor<'a>(r: &mut Reader<'a>, path: &str) -> MediaResult<(u8, Reader<'a>)> {
    let tag = r.u8().map_err(short(path))?;
    let mut len = 0usize;
    for _ in 0..4 {
        let b = r.u8().map_err(short(path))?;
        len = (len << 7) | usize::from(b & 0x7f);
        if b & 0x80 == 0 {
            break;
        }
    }
    let base = r.offset();
    let body = r.take(len).map_err(short(path))?;
    Ok((tag, Reader::new(body, base)))
}

/// Pulls the DecoderSpecificInfo (AudioSpecificConfig) out of an `esds` box.
fn parse_esds(b: &RawBox) -> MediaResult<Vec<u8>> {
    let path = b.path.as_str();
    let mut r = b.reader();
    full_header(&mut r, path)?;
    let (tag, mut es) = read_descriptor(&mut r, path)?;
    if tag != 0x03 {
        return Err(MediaError::parse(b.body_base + 4, path, "expected ES descriptor"));
    }
    es.skip(2).map_err(short(path))?;
    let flags = es.u8().map_err(short(path))?;
    if flags & 0x80 != 0 {
        es.skip(2).map_err(short(path))?;
    }
    if flags & 0x40 != 0 {
        let n = es.u8().map_err(short(path))?;
        es.skip(usize::from(n)).map_err(short(path))?;
    }
    if flags & 0x20 != 0 {
        es.skip(2).map_err(short(path))?;
    }
    while es.remaining() > 0 {
        let (tag, mut body) = read_descriptor(&mut es, path)?;
        if tag == 0x04 {
            body.skip(13).map_err(short(path))?;
            while body.remaining() > 0 {
                let (tag, mut dsi) = read_descriptor(&mut body, path)?;
                if tag == 0x05 {
                    return Ok(dsi.rest().to_vec());
                }
            }
        }
    }
    Err(MediaError::parse(b.start, path, "no decoder specific info"))
}

fn parse_stsz(b: &RawBox, file_len: usize) -> MediaResult<Vec<u32>> {
    let path = b.path.as_str();
    let mut r = b.reader();
    full_header(&mut r, path)?;
    let uniform = r.u32().map_err(short(path))?;
    let count = r.u32().map_err(short(path))? as usize;
    if uniform != 0 {
        if (count as u64).saturating_mul(u64::from(uniform)) > file_len as u64 {
            return Err(MediaError::parse(b.start, path, "declared samples exceed the file size"));
        }
        return Ok(vec![uniform; count]);
    }
    if count > r.remaining() / 4 {
        return Err(MediaError::parse(r.offset(), path, "sample size table ends early"));
    }
    (0..count).map(|_| r.u32().map_err(short(path))).collect()
}

fn parse_stts(b: &RawBox, sample_count: usize) -> MediaResult<Vec<u32>> {
    let path = b.path.as_str();
    let mut r = b.reader();
    full_header(&mut r, path)?;
    let entries = r.u32().map_err(short(path))?;
    let mut out = Vec::with_capacity(sample_count);
    for _ in 0..entries {
        let n = r.u32().map_err(short(path))? as usize;
        let delta = r.u32().map_err(short(path))?;
        if out.len() + n > sample_count {
            return Err(MediaError::parse(r.offset(), path, "more decoding times than samples"));
        }
        out.extend(std::iter::repeat(delta).take(n));
    }
    if out.len() != sample_count {
        return Err(MediaError::parse(b.start, path, "fewer decoding times than samples"));
    }
    Ok(out)
}

fn parse_stco(b: &RawBox) -> MediaResult<Vec<u64>> {
    let path = b.path.as_str();
    let wide = &b.kind == b"co64";
    let mut r = b.reader();
    full_header(&mut r, path)?;
    let count = r.u32().map_err(short(path))? as usize;
    let width = if wide { 8 } else { 4 };
    if count > r.remaining() / width {
        return Err(MediaError::parse(r.offset(), path, "chunk offset table ends early"));
    }
    (0..count)
        .map(|_| {
            if wide {
                r.u64().map_err(short(path))
            } else {
                r.u32().map(u64::from).map_err(short(path))
            }
        })
        .collect()
}

/// Expands sample-to-chunk runs into a per-chunk sample count.
fn parse_stsc(b: &RawBox, chunk_count: usize, sample_count: usize) -> MediaResult<Vec<usize>> {
    let path = b.path.as_str();
    let mut r = b.reader();
    full_header(&mut r, path)?;
    let entries = r.u32().map_err(short(path))? as usize;
    if entries > r.remaining() / 12 {
        return Err(MediaError::parse(r.offset(), path, "sample-to-chunk table ends early"));
    }
    let mut runs = Vec::with_capacity(entries);
    for _ in 0..entries {
        let first = r.u32().map_err(short(path))? as usize;
        let per = r.u32().map_err(short(path))? as usize;
        r.u32().map_err(short(path))?;
        runs.push((first, per));
    }
    let mut out = Vec::with_capacity(chunk_count);
    for (i, &(first, per)) in runs.iter().enumerate() {
        let next_first = runs.get(i + 1).map_or(chunk_count + 1, |r| r.0);
        if first == 0 || next_first < first || next_first > chunk_count + 1 {
            return Err(MediaError::parse(b.start, path, "sample-to-chunk runs are out of order"));
        }
        out.extend(std::iter::repeat(per).take(next_first - first));
    }
    if out.len() != chunk_count || out.iter().sum::<usize>() != sample_count {
        return Err(MediaError::parse(b.start, path, "chunk layout does not cover every sample"));
    }
    Ok(out)
}

fn parse_stss(b: &RawBox, sample_count: usize) -> MediaResult<Vec<bool>> {
    let path = b.path.as_str();
    let mut r = b.reader();
    full_header(&mut r, path)?;
    let n = r.u32().map_err(short(path))? as usize;
    let mut sync = vec![false; sample_count];
    for _ in 0..n {
        let idx = r.u32().map_err(short(path))? as usize;
        if idx == 0 || idx > sample_count {
            return Err(MediaError::parse(r.offset() - 4, path, "sync sample number out of range"));
        }
        sync[idx - 1] = true;
    }
    Ok(sync)
}
