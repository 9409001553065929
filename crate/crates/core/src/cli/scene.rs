//! Scene files: TOML tables `[geometry]`, `[domain]`, `[solver]`, `[task]`
//! holding typed scalars and arrays.

use std::path::Path;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::biharm::Domain;
use crate::error::{Error, Result};
use crate::models::CuspShape;
use crate::sphgrid::{CompactumSpec, Vec3};

const SECTIONS: [&str; 4] = ["geometry", "domain", "solver", "task"];

#[derive(Debug, Clone, Default)]
pub struct Scene {
    table: Table,
    pub hash: String,
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Scene { key: key.to_string(), msg: msg.into() }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    let x = match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        other => return Err(bad(key, format!("expected a number, found {}", other.type_str()))),
    };
    if !x.is_finite() {
        return Err(bad(key, "number must be finite"));
    }
    Ok(x)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Scene {
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            let key = e.span().map(|sp| line_key(text, sp.start)).unwrap_or_else(|| "<scene>".into());
            bad(&key, e.message().to_string())
        })?;
        for (name, v) in &table {
            if !SECTIONS.contains(&name.as_str()) {
                return Err(bad(name, format!("unknown section; expected one of {}", SECTIONS.join(", "))));
            }
            if !v.is_table() {
                return Err(bad(name, "top-level entries must be sections"));
            }
        }
        Ok(Scene { table, hash: sha256_hex(text.as_bytes()) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get(&self, key: &str) -> Option<&Value> {
        let (sec, name) = key.split_once('.')?;
        self.table.get(sec)?.as_table()?.get(name)
    }

    pub fn has_section(&self, sec: &str) -> bool {
        self.table.contains_key(sec)
    }

    pub fn num(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| as_f64(key, v)).transpose()
    }

    pub fn num_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    pub fn req_num(&self, key: &str) -> Result<f64> {
        self.num(key)?.ok_or_else(|| bad(key, "missing required number"))
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(_) => Err(bad(key, "expected a nonnegative integer")),
        }
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(bad(key, format!("expected true or false, found {}", v.type_str()))),
        }
    }

    pub fn text(&self, key: &str) -> Result<Option<&str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(bad(key, format!("expected a string, found {}", v.type_str()))),
        }
    }

    pub fn req_text(&self, key: &str) -> Result<&str> {
        self.text(key)?.ok_or_else(|| bad(key, "missing required string"))
    }

    pub fn vector(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a.iter().map(|v| as_f64(key, v)).collect::<Result<Vec<_>>>().map(Some),
            Some(v) => Err(bad(key, format!("expected an array of numbers, found {}", v.type_str()))),
        }
    }

    pub fn fixed<const N: usize>(&self, key: &str) -> Result<Option<[f64; N]>> {
        match self.vector(key)? {
            None => Ok(None),
            Some(v) => v.try_into().map(Some).map_err(|v: Vec<f64>| bad(key, format!("expected {N} numbers, found {}", v.len()))),
        }
    }

    /// Array of arrays, each of length `width`.
    pub fn rows(&self, key: &str, width: usize) -> Result<Option<Vec<Vec<f64>>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|row| match row {
                    Value::Array(r) if r.len() == width => r.iter().map(|v| as_f64(key, v)).collect(),
                    _ => Err(bad(key, format!("every entry must be an array of {width} numbers"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(bad(key, format!("expected an array of arrays, found {}", v.type_str()))),
        }
    }

    /// Fails on any key of `sec` not listed in `allowed`.
    pub fn only(&self, sec: &str, allowed: &[&str]) -> Result<()> {
        if let Some(t) = self.table.get(sec).and_then(Value::as_table) {
            for k in t.keys() {
                if !allowed.contains(&k.as_str()) {
                    return Err(bad(&format!("{sec}.{k}"), format!("unknown key; expected one of {}", allowed.join(", "))));
                }
            }
        }
        Ok(())
    }

    pub fn cusp_shape(&self) -> Result<CuspShape> {
        let shape = match self.req_text("geometry.shape")? {
            "constant" => CuspShape::Constant { theta0: self.req_num("geometry.theta0")? },
            "power" => CuspShape::Power { c: self.num_or("geometry.c", 1.0)?, lambda: self.req_num("geometry.lambda")? },
            "inverse_log" => CuspShape::InverseLog { c: self.num_or("geometry.c", 1.0)?, p: self.req_num("geometry.p")? },
            "tabulated" => CuspShape::Tabulated {
                r: self.vector("geometry.r")?.ok_or_else(|| bad("geometry.r", "missing radii"))?,
                h: self.vector("geometry.h")?.ok_or_else(|| bad("geometry.h", "missing openings"))?,
            },
            other => return Err(bad("geometry.shape", format!("unknown cusp shape `{other}`"))),
        };
        shape.validate().map_err(|e| bad("geometry.shape", e.to_string()))?;
        Ok(shape)
    }

    /// The `[geometry]` section as a compactum, or `None` when absent.
    pub fn compactum(&self) -> Result<Option<CompactumSpec>> {
        if !self.has_section("geometry") {
            return Ok(None);
        }
        let kind = self.req_text("geometry.kind")?;
        let spec = match kind {
            "shell" => {
                self.only("geometry", &["kind", "r_inner", "r_outer", "cap_cos"])?;
                CompactumSpec::Shell {
                    r_inner: self.req_num("geometry.r_inner")?,
                    r_outer: self.req_num("geometry.r_outer")?,
                    cap_cos: self.num_or("geometry.cap_cos", 1.0)?,
                }
            }
            "points" => {
                self.only("geometry", &["kind", "points"])?;
                let rows = self.rows("geometry.points", 4)?.ok_or_else(|| bad("geometry.points", "missing point list"))?;
                CompactumSpec::PointSet { points: rows.into_iter().map(|r| ([r[0], r[1], r[2]], r[3])).collect() }
            }
            "cone" => {
                self.only("geometry", &["kind", "b", "r_inner", "r_outer", "thickness", "points"])?;
                CompactumSpec::ConeSection {
                    b: self.fixed::<4>("geometry.b")?.ok_or_else(|| bad("geometry.b", "missing cone coefficients"))?,
                    r_inner: self.req_num("geometry.r_inner")?,
                    r_outer: self.req_num("geometry.r_outer")?,
                    thickness: self.req_num("geometry.thickness")?,
                }
            }
            "cusp" => {
                self.only("geometry", &["kind", "shape", "theta0", "c", "lambda", "p", "r", "h", "s_inner", "s_outer"])?;
                CompactumSpec::CuspLayer {
                    shape: self.cusp_shape()?,
                    s_inner: self.req_num("geometry.s_inner")?,
                    s_outer: self.req_num("geometry.s_outer")?,
                }
            }
            other => return Err(bad("geometry.kind", format!("unknown geometry `{other}`; expected shell, points, cone or cusp"))),
        };
        spec.validate().map_err(|e| bad("geometry.kind", e.to_string()))?;
        Ok(Some(spec))
    }

    /// Points listed as `[[x, y, z], ...]` under `key`.
    pub fn points(&self, key: &str) -> Result<Option<Vec<Vec3>>> {
        Ok(self.rows(key, 3)?.map(|rows| rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect()))
    }

    /// Voxel domain from `[domain]` with `n_cells` cells per axis, minus the
    /// geometry when one is given.
    pub fn voxel_domain(&self, n_cells: usize) -> Result<Domain> {
        self.only("domain", &["kind", "half_width", "radius", "r0", "amplitude", "seed", "punctured"])?;
        let hw = self.num_or("domain.half_width", 1.0)?;
        let punctured = self.flag("domain.punctured")?.unwrap_or(false);
        let dom = match self.text("domain.kind")?.unwrap_or("box") {
            "box" => Domain::full_box(n_cells, hw),
            "ball" => Domain::ball(n_cells, hw, self.req_num("domain.radius")?, false),
            "blob" => Domain::blob(
                n_cells,
                hw,
                self.req_num("domain.r0")?,
                self.num_or("domain.amplitude", 0.2)?,
                self.count("domain.seed")?.unwrap_or(1) as u64,
            ),
            other => return Err(bad("domain.kind", format!("unknown domain `{other}`; expected box, ball or blob"))),
        }
        .map_err(|e| bad("domain.kind", e.to_string()))?;
        let obstacle = self.compactum()?;
        let dom = dom.without(obstacle.as_ref(), punctured)?;
        if !dom.is_connected() {
            return Err(bad("domain.kind", "free nodes of the domain are not connected"));
        }
        Ok(dom)
    }
}

fn line_key(text: &str, offset: usize) -> String {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    let lineno = text[..start].matches('\n').count() + 1;
    match line.split_once('=') {
        Some((k, _)) if !k.trim().is_empty() => k.trim().to_string(),
        _ => format!("line {lineno}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHELL: &str = "[geometry]\nkind = \"shell\"\nr_inner = 1.2\nr_outer = 1.6\n\n[solver]\ngrid = 24\ntol = 1e-8\n";

    #[test]
    fn typed_access() {
        let s = Scene::parse(SHELL).unwrap();
        assert_eq!(s.count("solver.grid").unwrap(), Some(24));
        assert_eq!(s.num("solver.tol").unwrap(), Some(1e-8));
        assert_eq!(s.num("solver.missing").unwrap(), None);
        assert_eq!(s.hash.len(), 64);
        match s.compactum().unwrap().unwrap() {
            CompactumSpec::Shell { r_inner, r_outer, cap_cos } => assert_eq!((r_inner, r_outer, cap_cos), (1.2, 1.6, 1.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        let s = Scene::parse("[solver]\ngrid = \"many\"\n").unwrap();
        assert!(matches!(s.count("solver.grid"), Err(Error::Scene { key, .. }) if key == "solver.grid"));
        let e = Scene::parse("[solver]\ntol = abc\n").unwrap_err();
        assert!(matches!(e, Error::Scene { ref key, .. } if key == "tol"), "{e}");
        let e = Scene::parse("[geometry]\nkind = \"torus\"\n").unwrap().compactum().unwrap_err();
        assert!(matches!(e, Error::Scene { ref key, .. } if key == "geometry.kind"));
        let e = Scene::parse("[geometry]\nkind = \"shell\"\nr_inner = 1.0\n").unwrap().compactum().unwrap_err();
        assert!(matches!(e, Error::Scene { ref key, .. } if key == "geometry.r_outer"));
        let e = Scene::parse("[extras]\nx = 1\n").unwrap_err();
        assert!(matches!(e, Error::Scene { ref key, .. } if key == "extras"));
        let e = Scene::parse("[geometry]\nkind = \"shell\"\nr_inner = 1.0\nr_outer = 2.0\nradius = 3\n").unwrap().compactum().unwrap_err();
        assert!(matches!(e, Error::Scene { ref key, .. } if key == "geometry.radius"));
    }

    #[test]
    fn arrays() {
        let s = Scene::parse("[geometry]\nkind = \"points\"\npoints = [[1.0, 0, 0, 0.1], [0, 2, 0, 0.2]]\n[task]\nb = [1, 0, 0, 0]\n").unwrap();
        assert_eq!(s.fixed::<4>("task.b").unwrap(), Some([1.0, 0.0, 0.0, 0.0]));
        assert!(s.fixed::<3>("task.b").is_err());
        match s.compactum().unwrap().unwrap() {
            CompactumSpec::PointSet { points } => assert_eq!(points[1], ([0.0, 2.0, 0.0], 0.2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = Scene::parse(SHELL).unwrap();
        let b = Scene::parse(&SHELL.replace("24", "32")).unwrap();
        assert_ne!(a.hash, b.hash);
        assert_eq!(a.hash, Scene::parse(SHELL).unwrap().hash);
    }
}
