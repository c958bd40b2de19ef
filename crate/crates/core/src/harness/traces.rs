use serde::{Deserialize, Serialize};

/// Where the scripted user is looking. Symbolic targets are resolved against
/// the session's live layout each tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeTarget {
    Text,
    /// The partner's eyes.
    Face,
    Off,
    Invalid,
    Arc(usize),
    Point([f64; 2]),
    /// Stop producing samples.
    End,
}

impl std::str::FromStr for GazeTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        Ok(match s {
            "text" => GazeTarget::Text,
            "face" => GazeTarget::Face,
            "off" => GazeTarget::Off,
            "invalid" => GazeTarget::Invalid,
            "end" => GazeTarget::End,
            _ => {
                if let Some(n) = s.strip_prefix("arc:") {
                    GazeTarget::Arc(n.parse().map_err(|e| format!("bad arc index {n:?}: {e}"))?)
                } else if let Some((x, y)) = s.split_once(',') {
                    let x = x.trim().parse().map_err(|e| format!("bad x {x:?}: {e}"))?;
                    let y = y.trim().parse().map_err(|e| format!("bad y {y:?}: {e}"))?;
                    GazeTarget::Point([x, y])
                } else {
                    return Err(format!("unknown gaze target {s:?}"));
                }
            }
        })
    }
}

/// Piecewise-constant gaze script: each entry holds until the next one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GazeScript {
    pub entries: Vec<(u64, GazeTarget)>,
}

impl GazeScript {
    pub fn target_at(&self, t_ms: u64) -> Option<GazeTarget> {
        let idx = self.entries.partition_point(|(t, _)| *t <= t_ms);
        idx.checked_sub(1).map(|i| self.entries[i].1)
    }

    pub fn last_t(&self) -> Option<u64> {
        self.entries.last().map(|e| e.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceLandmarks {
    pub le: [f64; 3],
    pub re: [f64; 3],
    pub nb: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceTrace {
    /// `None` marks a frame where the face was not detected.
    pub frames: Vec<(u64, Option<FaceLandmarks>)>,
}

impl FaceTrace {
    pub fn last_t(&self) -> Option<u64> {
        self.frames.last().map(|f| f.0)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_t(field: &str, line: usize, prev: Option<u64>) -> Result<u64, String> {
    let t: u64 = field
        .trim()
        .parse()
        .map_err(|e| format!("line {line}: bad t_ms {field:?}: {e}"))?;
    if prev.is_some_and(|p| t < p) {
        return Err(format!("line {line}: t_ms {t} goes backwards"));
    }
    Ok(t)
}

/// Parses `t_ms<TAB>target` lines.
pub fn parse_gaze_script(text: &str) -> Result<GazeScript, String> {
    let mut entries: Vec<(u64, GazeTarget)> = Vec::new();
    for (n, line) in content_lines(text) {
        let (t, target) = line
            .split_once('\t')
            .ok_or_else(|| format!("line {n}: expected t_ms<TAB>target"))?;
        let t = parse_t(t, n, entries.last().map(|e| e.0))?;
        let target = target.parse().map_err(|e| format!("line {n}: {e}"))?;
        entries.push((t, target));
    }
    Ok(GazeScript { entries })
}

fn parse_point(field: &str, line: usize) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = field.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("line {line}: expected x,y,z, got {field:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|e| format!("line {line}: bad coordinate {p:?}: {e}"))?;
    }
    Ok(out)
}

/// Parses `t_ms<TAB>le<TAB>re<TAB>nb` lines (each point `x,y,z` in mm) or
/// `t_ms<TAB>lost`.
pub fn parse_face_trace(text: &str) -> Result<FaceTrace, String> {
    let mut frames: Vec<(u64, Option<FaceLandmarks>)> = Vec::new();
    for (n, line) in content_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let t = parse_t(fields[0], n, frames.last().map(|f| f.0))?;
        let lm = match fields.as_slice() {
            [_, lost] if lost.trim() == "lost" => None,
            [_, le, re, nb] => Some(FaceLandmarks {
                le: parse_point(le, n)?,
                re: parse_point(re, n)?,
                nb: parse_point(nb, n)?,
            }),
            _ => return Err(format!("line {n}: expected 4 tab-separated fields or `lost`")),
        };
        frames.push((t, lm));
    }
    Ok(FaceTrace { frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaze_targets() {
        let s = parse_gaze_script("# c\n0\ttext\n500\tarc:3\n900\t10.5, 20\n1000\tinvalid\n2000\tend\n").unwrap();
        assert_eq!(s.target_at(0), Some(GazeTarget::Text));
        assert_eq!(s.target_at(499), Some(GazeTarget::Text));
        assert_eq!(s.target_at(500), Some(GazeTarget::Arc(3)));
        assert_eq!(s.target_at(950), Some(GazeTarget::Point([10.5, 20.0])));
        assert_eq!(s.target_at(5000), Some(GazeTarget::End));
        let late = parse_gaze_script("100\tface\n").unwrap();
        assert_eq!(late.target_at(50), None);
    }

    #[test]
    fn gaze_errors() {
        assert!(parse_gaze_script("0 text").is_err());
        assert!(parse_gaze_script("0\tnose").is_err());
        assert!(parse_gaze_script("10\ttext\n5\tface").is_err());
    }

    #[test]
    fn face_lines() {
        let f = parse_face_trace("0\t-45,0,1500\t45,0,1500\t0,50,1500\n100\tlost\n").unwrap();
        assert_eq!(f.frames.len(), 2);
        assert_eq!(f.frames[0].1.unwrap().nb, [0.0, 50.0, 1500.0]);
        assert!(f.frames[1].1.is_none());
        assert!(parse_face_trace("0\t1,2\t3,4,5\t6,7,8").is_err());
        assert!(parse_face_trace("0\t1,2,3").is_err());
    }
}
