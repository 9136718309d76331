//! Minimal `multipart/form-data` encoding and decoding for the speech
//! endpoint.

use crate::seed::stable_hash;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub name: String,
    pub filename: Option<String>,
    pub content_type: Option<String>,
    pub data: Vec<u8>,
}

impl Part {
    pub fn text(name: &str, value: &str) -> Self {
        Self {
            name: name.into(),
            filename: None,
            content_type: None,
            data: value.as_bytes().to_vec(),
        }
    }

    pub fn file(name: &str, filename: &str, content_type: &str, data: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            filename: Some(filename.into()),
            content_type: Some(content_type.into()),
            data,
        }
    }
}

/// Returns `(content_type_header, body)`. The boundary is derived from the
/// content, so identical requests are byte-identical.
pub fn encode(parts: &[Part]) -> (String, Vec<u8>) {
    let mut all = Vec::new();
    for p in parts {
        all.extend_from_slice(p.name.as_bytes());
        all.extend_from_slice(&p.data);
    }
    let mut salt = 0u64;
    let boundary = loop {
        let b = format!(
            "convoforge-{:016x}",
            stable_hash(&[&all[..], &salt.to_le_bytes()].concat())
        );
        if !contains(&all, b.as_bytes()) {
            break b;
        }
        salt += 1;
    };

    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        let mut disposition = format!("Content-Disposition: form-data; name=\"{}\"", p.name);
        if let Some(f) = &p.filename {
            disposition.push_str(&format!("; filename=\"{f}\""));
        }
        body.extend_from_slice(disposition.as_bytes());
        body.extend_from_slice(b"\r\n");
        if let Some(ct) = &p.content_type {
            body.extend_from_slice(format!("Content-Type: {ct}\r\n").as_bytes());
        }
        body.extend_from_slice(b"\r\n");
        body.extend_from_slice(&p.data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    find(haystack, needle, 0).is_some()
}

fn find(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    (from..=haystack.len() - needle.len()).find(|&i| &haystack[i..i + needle.len()] == needle)
}

fn header_param(header: &str, key: &str) -> Option<String> {
    header.split(';').map(str::trim).find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        (k.trim().eq_ignore_ascii_case(key)).then(|| v.trim().trim_matches('"').to_string())
    })
}

pub fn boundary_of(content_type: &str) -> Option<String> {
    let (mime, _) = content_type.split_once(';')?;
    if !mime.trim().eq_ignore_ascii_case("multipart/form-data") {
        return None;
    }
    header_param(content_type, "boundary")
}

pub fn decode(content_type: &str, body: &[u8]) -> Result<Vec<Part>, String> {
    let boundary = boundary_of(content_type).ok_or("not a multipart/form-data body")?;
    let delimiter = format!("--{boundary}").into_bytes();
    let mut parts = Vec::new();
    let mut pos = find(body, &delimiter, 0).ok_or("missing opening boundary")? + delimiter.len();
    loop {
        if body[pos..].starts_with(b"--") {
            return Ok(parts);
        }
        if !body[pos..].starts_with(b"\r\n") {
            return Err("boundary not followed by CRLF".into());
        }
        pos += 2;
        let header_end = find(body, b"\r\n\r\n", pos).ok_or("unterminated part headers")?;
        let headers = std::str::from_utf8(&body[pos..header_end])
            .map_err(|_| "part headers are not UTF-8")?;
        let next = find(body, &delimiter, header_end + 4).ok_or("missing closing boundary")?;
        let data_end = next
            .checked_sub(2)
            .filter(|&e| e >= header_end + 4 && &body[e..next] == b"\r\n")
            .ok_or("part data not terminated by CRLF")?;

        let mut name = None;
        let mut filename = None;
        let mut content_type = None;
        for line in headers.split("\r\n") {
            let Some((k, v)) = line.split_once(':') else {
                continue;
            };
            if k.trim().eq_ignore_ascii_case("content-disposition") {
                name = header_param(v, "name");
                filename = header_param(v, "filename");
            } else if k.trim().eq_ignore_ascii_case("content-type") {
                content_type = Some(v.trim().to_string());
            }
        }
        parts.push(Part {
            name: name.ok_or("part without a name")?,
            filename,
            content_type,
            data: body[header_end + 4..data_end].to_vec(),
        });
        pos = next + delimiter.len();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let parts = vec![
            Part::file("reference", "reference.wav", "audio/wav", vec![0, 1, 2, 13, 10, 255]),
            Part::text("text", "Hello there, friend.\r\nSecond line"),
            Part::text("sample_rate", "24000"),
        ];
        let (ct, body) = encode(&parts);
        assert_eq!(decode(&ct, &body).unwrap(), parts);
        assert_eq!(encode(&parts), (ct, body));
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode("application/json", b"{}").is_err());
        assert!(decode("multipart/form-data; boundary=x", b"nothing").is_err());
        assert!(decode("multipart/form-data; boundary=x", b"--x\r\nno-end").is_err());
    }
}
