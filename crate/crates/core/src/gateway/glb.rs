//! Binary glTF container checks and a minimal writer.

const MAGIC: &[u8; 4] = b"glTF";
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;

fn le_u32(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at + 4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
}

/// Structural check of a GLB file: header, declared length, a JSON chunk
/// holding a glTF 2.0 asset object and an optional binary chunk.
pub fn check_glb(bytes: &[u8]) -> Result<(), String> {
    if bytes.len() < 20 || &bytes[0..4] != MAGIC {
        return Err("missing glTF header".into());
    }
    let version = le_u32(bytes, 4).unwrap();
    if version != 2 {
        return Err(format!("unsupported GLB version {version}"));
    }
    let total = le_u32(bytes, 8).unwrap() as usize;
    if total != bytes.len() {
        return Err(format!("header declares {total} bytes, file has {}", bytes.len()));
    }
    let mut at = 12;
    let mut chunk = 0;
    while at < total {
        let len = le_u32(bytes, at).ok_or("truncated chunk header")? as usize;
        let kind = le_u32(bytes, at + 4).ok_or("truncated chunk header")?;
        let start = at + 8;
        let end = start.checked_add(len).filter(|&e| e <= total).ok_or("chunk overruns file")?;
        if len % 4 != 0 {
            return Err(format!("chunk {chunk} length {len} is not 4-byte aligned"));
        }
        match (chunk, kind) {
            (0, CHUNK_JSON) => {
                let doc: serde_json::Value =
                    serde_json::from_slice(&bytes[start..end]).map_err(|e| format!("JSON chunk: {e}"))?;
                if doc.pointer("/asset/version").and_then(|v| v.as_str()) != Some("2.0") {
                    return Err("JSON chunk lacks asset.version 2.0".into());
                }
            }
            (0, _) => return Err("first chunk must be JSON".into()),
            (1, CHUNK_BIN) => {}
            (1, _) => return Err("second chunk must be BIN".into()),
            _ => return Err("unexpected extra chunk".into()),
        }
        at = end;
        chunk += 1;
    }
    if chunk == 0 {
        return Err("no JSON chunk".into());
    }
    Ok(())
}

pub fn validate_glb(bytes: &[u8]) -> bool {
    check_glb(bytes).is_ok()
}

/// Assembles a GLB from a glTF JSON document and a binary buffer, padding
/// the JSON with spaces and the buffer with zeros.
pub fn build_glb(json: &str, bin: &[u8]) -> Vec<u8> {
    let mut json = json.as_bytes().to_vec();
    while json.len() % 4 != 0 {
        json.push(b' ');
    }
    let mut bin = bin.to_vec();
    while bin.len() % 4 != 0 {
        bin.push(0);
    }
    let bin_part = if bin.is_empty() { 0 } else { 8 + bin.len() };
    let total = 12 + 8 + json.len() + bin_part;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_JSON.to_le_bytes());
    out.extend_from_slice(&json);
    if !bin.is_empty() {
        out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
        out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
        out.extend_from_slice(&bin);
    }
    out
}

/// Single-triangle mesh tagged with the source image.
pub fn triangle_glb(node_name: &str, source_sha256: &str) -> Vec<u8> {
    let mut bin = Vec::with_capacity(36);
    for v in [0.0f32, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0] {
        bin.extend_from_slice(&v.to_le_bytes());
    }
    let doc = serde_json::json!({
        "asset": {"version": "2.0", "generator": "copilot mock generator"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0, "name": node_name}],
        "meshes": [{"primitives": [{"attributes": {"POSITION": 0}}]}],
        "accessors": [{
            "bufferView": 0, "componentType": 5126, "count": 3, "type": "VEC3",
            "min": [0.0, 0.0, 0.0], "max": [1.0, 1.0, 0.0]
        }],
        "bufferViews": [{"buffer": 0, "byteOffset": 0, "byteLength": 36}],
        "buffers": [{"byteLength": 36}],
        "extras": {"source_sha256": source_sha256}
    });
    build_glb(&doc.to_string(), &bin)
}
