//! Deterministic page thumbnails. Each visible text run becomes a bar whose
//! width follows its length, so different pages give different images and
//! the same page always gives the same bytes.

use crate::dom::{Controls, Dom};

pub const WIDTH: u32 = 320;
pub const HEIGHT: u32 = 240;

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn fill(buf: &mut [u8], x0: u32, y0: u32, w: u32, h: u32, rgb: [u8; 3]) {
    for y in y0..(y0 + h).min(HEIGHT) {
        for x in x0..(x0 + w).min(WIDTH) {
            let i = ((y * WIDTH + x) * 3) as usize;
            buf[i..i + 3].copy_from_slice(&rgb);
        }
    }
}

fn visible_lines(dom: &Dom) -> Vec<String> {
    let Ok(body) = dom.select(None, "body") else {
        return vec![];
    };
    let Some(body) = body.first().copied() else {
        return vec![];
    };
    let Some(el) = dom.element(body) else {
        return vec![];
    };
    let mut lines = Vec::new();
    for node in el.descendants() {
        let Some(text) = node.value().as_text() else {
            continue;
        };
        let inside_script = node.ancestors().any(|a| {
            a.value()
                .as_element()
                .is_some_and(|e| matches!(e.name(), "script" | "style" | "noscript"))
        });
        let t = text.trim();
        if !t.is_empty() && !inside_script {
            lines.push(t.to_string());
        }
    }
    lines
}

pub fn render(url: &str, dom: &Dom, controls: &Controls) -> Vec<u8> {
    let mut buf = vec![0xffu8; (WIDTH * HEIGHT * 3) as usize];
    // Path and query only, so the ephemeral port does not leak into the image.
    let page = url::Url::parse(url)
        .map(|u| format!("{}?{}", u.path(), u.query().unwrap_or("")))
        .unwrap_or_else(|_| url.to_string());
    let h = fnv(page.as_bytes());
    fill(&mut buf, 0, 0, WIDTH, 18, [0x13, 0x19, 0x21]);
    fill(&mut buf, 6, 5, 40, 8, [(h >> 16) as u8 | 0x80, (h >> 8) as u8, h as u8]);
    let mut y = 24;
    for line in visible_lines(dom) {
        if y + 6 > HEIGHT {
            break;
        }
        let w = (line.chars().count() as u32 * 3).clamp(4, WIDTH - 16);
        let shade = (fnv(line.as_bytes()) % 96) as u8 + 48;
        fill(&mut buf, 8, y, w, 5, [shade, shade, shade]);
        y += 8;
    }
    let checked = controls.values().filter(|c| c.checked == Some(true)).count() as u32;
    for k in 0..checked.min(20) {
        fill(&mut buf, WIDTH - 12, 24 + k * 10, 6, 6, [0xff, 0x99, 0x00]);
    }
    encode(&buf)
}

fn encode(rgb: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, WIDTH, HEIGHT);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(rgb).expect("in-memory png data");
    }
    out
}
