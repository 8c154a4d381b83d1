use std::collections::VecDeque;

use super::{DataError, Raster};

/// Pixels reachable from the border through zero pixels (4-connectivity).
fn exterior(r: &Raster<u8>) -> Vec<bool> {
    let (w, h) = (r.width(), r.height());
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let push = |x: usize, y: usize, seen: &mut Vec<bool>, q: &mut VecDeque<(usize, usize)>| {
        let i = y * w + x;
        if !seen[i] && r.data()[i] == 0 {
            seen[i] = true;
            q.push_back((x, y));
        }
    };
    for x in 0..w {
        push(x, 0, &mut seen, &mut queue);
        push(x, h - 1, &mut seen, &mut queue);
    }
    for y in 0..h {
        push(0, y, &mut seen, &mut queue);
        push(w - 1, y, &mut seen, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        if x > 0 {
            push(x - 1, y, &mut seen, &mut queue);
        }
        if x + 1 < w {
            push(x + 1, y, &mut seen, &mut queue);
        }
        if y > 0 {
            push(x, y - 1, &mut seen, &mut queue);
        }
        if y + 1 < h {
            push(x, y + 1, &mut seen, &mut queue);
        }
    }
    seen
}

fn complement_of_exterior(r: &Raster<u8>) -> Raster<u8> {
    let ext = exterior(r);
    Raster::from_vec(r.width(), r.height(), ext.iter().map(|&e| u8::from(!e)).collect())
}

/// True if some set pixel has all four neighbours set, i.e. the shape
/// already has an interior of its own.
fn has_interior(r: &Raster<u8>) -> bool {
    let (w, h) = (r.width(), r.height());
    (1..h.saturating_sub(1)).any(|y| {
        (1..w - 1).any(|x| {
            r.get(x, y) != 0
                && r.get(x - 1, y) != 0
                && r.get(x + 1, y) != 0
                && r.get(x, y - 1) != 0
                && r.get(x, y + 1) != 0
        })
    })
}

/// 3x3 max (`dilate = true`) or min filter; out-of-image counts as 0.
fn morph(r: &Raster<u8>, dilate: bool) -> Raster<u8> {
    let (w, h) = (r.width() as isize, r.height() as isize);
    let mut out = Raster::new(r.width(), r.height());
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            let mut all = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = nx >= 0 && ny >= 0 && nx < w && ny < h && r.get(nx as usize, ny as usize) != 0;
                    any |= v;
                    all &= v;
                }
            }
            out.set(x as usize, y as usize, u8::from(if dilate { any } else { all }));
        }
    }
    out
}

/// Converts a closed outline into a filled region (outline included).
///
/// The exterior is flood-filled from the image border and complemented. If
/// the fill leaks through a gap, the outline is dilated once, filled, and the
/// result eroded back.
pub fn fill_annotation(contour: &Raster<u8>, id: &str) -> Result<Raster<u8>, DataError> {
    let binary = contour.map(|v| u8::from(v != 0));
    let area = binary.count_nonzero();
    if area == 0 {
        return Err(DataError::EmptyAnnotation(id.to_string()));
    }
    let filled = complement_of_exterior(&binary);
    if filled.count_nonzero() > area || has_interior(&binary) {
        return Ok(filled);
    }
    let thick = morph(&binary, true);
    let filled = complement_of_exterior(&thick);
    if filled.count_nonzero() > thick.count_nonzero() {
        return Ok(morph(&filled, false));
    }
    Err(DataError::OpenContour(id.to_string()))
}

/// Mask pixels with a 4-neighbour outside the mask (or on the image edge).
pub fn outline(mask: &Raster<u8>) -> Raster<u8> {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) == 0 {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || mask.get(x - 1, y) == 0
                || mask.get(x + 1, y) == 0
                || mask.get(x, y - 1) == 0
                || mask.get(x, y + 1) == 0;
            out.set(x, y, u8::from(edge));
        }
    }
    out
}
