//! Binary scene cache.
//!
//! Layout (all integers and floats little-endian, floats are IEEE-754 `f32`):
//!
//! ```text
//! file     := magic:"MPAS" version:u32 count:u32 record*count
//! record   := byte_len:u32 body            (byte_len = size of body)
//! body     := scene_id:u64 frame:u8 anchor_x:f32 anchor_y:f32 anchor_heading:f32
//!             target:track n_neighbors:u32 track*n n_polylines:u32 polyline*n
//! track    := agent_id:u64 agent_type:u8 n_hist:u32 state*n_hist n_future:u32 state*n_future
//! state    := x:f32 y:f32 heading:f32 vx:f32 vy:f32 valid:u8
//! polyline := lane_type:u8 n_nodes:u32 (x:f32 y:f32 dir_x:f32 dir_y:f32)*n_nodes
//! ```
//!
//! Frame codes: 0 = world, 1 = canonical. Agent type codes: 0 = vehicle,
//! 1 = pedestrian, 2 = cyclist. Readers decode the whole file before
//! returning anything; trailing bytes are an error.

use std::path::Path;

use super::{AgentState, AgentTrack, AgentType, Frame, Pose, RoadGraphPolyline, RoadNode, Scene};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CACHE_MAGIC: [u8; 4] = *b"MPAS";
pub const CACHE_VERSION: u32 = 1;
const KIND: &str = "scene cache";

impl Writer {
    fn f<S: Scalar>(&mut self, v: S) {
        self.f32(v.as_f32());
    }

    fn state<S: Scalar>(&mut self, s: &AgentState<S>) {
        for v in [s.x, s.y, s.heading, s.vx, s.vy] {
            self.f(v);
        }
        self.u8(s.valid as u8);
    }

    fn track<S: Scalar>(&mut self, t: &AgentTrack<S>) {
        self.u64(t.agent_id);
        self.u8(t.agent_type.code());
        self.len(t.history.len());
        t.history.iter().for_each(|s| self.state(s));
        self.len(t.future.len());
        t.future.iter().for_each(|s| self.state(s));
    }

    fn scene<S: Scalar>(&mut self, s: &Scene<S>) {
        self.u64(s.scene_id);
        self.u8(match s.frame {
            Frame::World => 0,
            Frame::Canonical => 1,
        });
        for v in [s.anchor_pose.x, s.anchor_pose.y, s.anchor_pose.heading] {
            self.f(v);
        }
        self.track(&s.target);
        self.len(s.neighbors.len());
        s.neighbors.iter().for_each(|t| self.track(t));
        self.len(s.roadgraph.len());
        for p in &s.roadgraph {
            self.u8(p.lane_type);
            self.len(p.nodes.len());
            for n in &p.nodes {
                for v in [n.x, n.y, n.dir_x, n.dir_y] {
                    self.f(v);
                }
            }
        }
    }
}

impl Reader<'_> {
    fn f<S: Scalar>(&mut self) -> Result<S> {
        Ok(S::lit(self.f32()? as f64))
    }

    fn state<S: Scalar>(&mut self) -> Result<AgentState<S>> {
        let (x, y, heading, vx, vy) = (self.f()?, self.f()?, self.f()?, self.f()?, self.f()?);
        let valid = self.bool()?;
        Ok(AgentState { x, y, heading, vx, vy, valid })
    }

    fn track<S: Scalar>(&mut self) -> Result<AgentTrack<S>> {
        let agent_id = self.u64()?;
        let code = self.u8()?;
        let agent_type = AgentType::from_code(code).ok_or_else(|| self.corrupt(format!("agent type {code}")))?;
        let n = self.count(21)?;
        let history = (0..n).map(|_| self.state()).collect::<Result<_>>()?;
        let n = self.count(21)?;
        let future = (0..n).map(|_| self.state()).collect::<Result<_>>()?;
        Ok(AgentTrack { agent_id, agent_type, history, future })
    }

    fn scene<S: Scalar>(&mut self) -> Result<Scene<S>> {
        let scene_id = self.u64()?;
        let frame = match self.u8()? {
            0 => Frame::World,
            1 => Frame::Canonical,
            other => return Err(self.corrupt(format!("frame code {other}"))),
        };
        let anchor_pose = Pose { x: self.f()?, y: self.f()?, heading: self.f()? };
        let target = self.track()?;
        let n = self.count(13)?;
        let neighbors = (0..n).map(|_| self.track()).collect::<Result<_>>()?;
        let n = self.count(5)?;
        let mut roadgraph = Vec::with_capacity(n);
        for _ in 0..n {
            let lane_type = self.u8()?;
            let k = self.count(16)?;
            let nodes = (0..k)
                .map(|_| Ok(RoadNode { x: self.f()?, y: self.f()?, dir_x: self.f()?, dir_y: self.f()? }))
                .collect::<Result<_>>()?;
            roadgraph.push(RoadGraphPolyline { nodes, lane_type });
        }
        Ok(Scene { scene_id, target, neighbors, roadgraph, frame, anchor_pose })
    }
}

/// Serializes canonical-frame scenes. Values are stored as `f32`.
pub fn encode_scenes<S: Scalar>(scenes: &[Scene<S>]) -> Result<Vec<u8>> {
    if let Some(s) = scenes.iter().find(|s| s.frame != Frame::Canonical) {
        return Err(Error::arg(format!("scene {} is not canonicalized; only canonical scenes are cached", s.scene_id)));
    }
    let mut w = Writer::new();
    w.buf.extend_from_slice(&CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    w.len(scenes.len());
    for s in scenes {
        let mut body = Writer::new();
        body.scene(s);
        w.len(body.buf.len());
        w.buf.extend_from_slice(&body.buf);
    }
    Ok(w.buf)
}

pub fn decode_scenes<S: Scalar>(bytes: &[u8]) -> Result<Vec<Scene<S>>> {
    let mut r = Reader::new(bytes, KIND);
    r.header(CACHE_MAGIC, CACHE_VERSION)?;
    let count = r.count(4)?;
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u32()? as usize;
        let start = r.pos;
        let body = r.take(len)?;
        let mut sub = Reader::new(body, KIND);
        let scene = sub.scene()?;
        if sub.pos != body.len() {
            return Err(Error::Corrupt {
                kind: KIND,
                detail: format!("record {i} at byte {start} has {} trailing bytes", body.len() - sub.pos),
            });
        }
        scenes.push(scene);
    }
    r.finish()?;
    Ok(scenes)
}

pub fn cache_write<S: Scalar>(path: impl AsRef<Path>, scenes: &[Scene<S>]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_scenes(scenes)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn cache_read<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Scene<S>>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scenes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, to_canonical_frame, GeneratorConfig};

    fn canonical_f32(seed: u64) -> Scene<f32> {
        let s = generate_synthetic_scene::<f64>(seed, &GeneratorConfig::default()).unwrap();
        to_canonical_frame(&s).unwrap().cast()
    }

    #[test]
    fn empty_cache_round_trips() {
        let bytes = encode_scenes::<f32>(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode_scenes::<f32>(&bytes).unwrap().is_empty());
    }

    #[test]
    fn scenes_round_trip_bit_exactly() {
        let scenes: Vec<_> = (0..5).map(canonical_f32).collect();
        let bytes = encode_scenes(&scenes).unwrap();
        let back: Vec<Scene<f32>> = decode_scenes(&bytes).unwrap();
        assert_eq!(back, scenes);
        assert_eq!(encode_scenes(&back).unwrap(), bytes);
    }

    #[test]
    fn flipped_magic_is_a_version_level_error() {
        let mut bytes = encode_scenes(&[canonical_f32(1)]).unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(decode_scenes::<f32>(&bytes), Err(Error::BadMagic { .. })));
        let mut bytes = encode_scenes(&[canonical_f32(1)]).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_scenes::<f32>(&bytes), Err(Error::UnsupportedVersion { found: 9, .. })));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let bytes = encode_scenes(&[canonical_f32(2), canonical_f32(3)]).unwrap();
        for cut in [5, 11, 40, bytes.len() - 1] {
            assert!(matches!(decode_scenes::<f32>(&bytes[..cut]), Err(Error::Corrupt { .. })), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_scenes::<f32>(&extra).is_err());
    }

    #[test]
    fn world_frame_scenes_are_refused() {
        let s = generate_synthetic_scene::<f32>(1, &GeneratorConfig::default()).unwrap();
        assert!(encode_scenes(&[s]).is_err());
    }
}
