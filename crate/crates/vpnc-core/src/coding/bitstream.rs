//! Compressed-panorama container format.
//!
//! Fixed-layout little-endian header followed by one length-prefixed pair
//! of coded chunks (hyper stream, latent stream) per viewport, in plan
//! order. The embedded model hash lets a decoder refuse a checkpoint that
//! is not the one the stream was produced with. Byte layout is documented
//! in FORMAT.md at the repository root.

use crate::error::{Error, Result};
use crate::geometry::FieldOfView;

pub const MAGIC: [u8; 4] = *b"VPNC";
pub const VERSION: u8 = 1;
/// Marks a stream coded at a rate point outside the built-in ladder.
pub const LAMBDA_CUSTOM: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamHeader {
    pub erp_width: u32,
    pub erp_height: u32,
    pub fov: FieldOfView,
    pub viewport_width: u32,
    pub viewport_height: u32,
    /// Coverage-plan algorithm identifier; 0 is the latitude-ring plan.
    pub plan_id: u8,
    pub model_kind: u8,
    pub use_vpct: bool,
    pub lambda_index: u8,
    pub model_hash: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewportPayload {
    /// Coded hyper-latent chunk; empty when the model has no hyper branch.
    pub z: Vec<u8>,
    pub y: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub viewports: Vec<ViewportPayload>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&h.erp_width.to_le_bytes());
        out.extend_from_slice(&h.erp_height.to_le_bytes());
        out.extend_from_slice(&h.fov.h_deg.to_le_bytes());
        out.extend_from_slice(&h.fov.v_deg.to_le_bytes());
        out.extend_from_slice(&h.viewport_width.to_le_bytes());
        out.extend_from_slice(&h.viewport_height.to_le_bytes());
        out.push(h.plan_id);
        out.push(h.model_kind);
        out.push(h.use_vpct as u8);
        out.push(h.lambda_index);
        out.extend_from_slice(&h.model_hash);
        out.extend_from_slice(&(self.viewports.len() as u32).to_le_bytes());
        for vp in &self.viewports {
            out.extend_from_slice(&(vp.z.len() as u32).to_le_bytes());
            out.extend_from_slice(&vp.z);
            out.extend_from_slice(&(vp.y.len() as u32).to_le_bytes());
            out.extend_from_slice(&vp.y);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::corrupt(0, "bad magic, not a compressed panorama"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "stream format version {version} is not supported (expected {VERSION})"
            )));
        }
        let erp_width = r.u32()?;
        let erp_height = r.u32()?;
        let fov_h = r.f64()?;
        let fov_v = r.f64()?;
        let fov = FieldOfView::new(fov_h, fov_v)
            .map_err(|_| Error::corrupt(13, "field of view outside (0, 180)"))?;
        let viewport_width = r.u32()?;
        let viewport_height = r.u32()?;
        let plan_id = r.u8()?;
        let model_kind = r.u8()?;
        let use_vpct = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::corrupt(r.pos - 1, format!("bad attention flag {v}"))),
        };
        let lambda_index = r.u8()?;
        let mut model_hash = [0u8; 32];
        model_hash.copy_from_slice(r.take(32)?);
        let n = r.u32()? as usize;
        if n > 1 << 20 {
            return Err(Error::corrupt(r.pos - 4, format!("implausible viewport count {n}")));
        }
        let mut viewports = Vec::with_capacity(n);
        for _ in 0..n {
            let z_len = r.u32()? as usize;
            let z = r.take(z_len)?.to_vec();
            let y_len = r.u32()? as usize;
            let y = r.take(y_len)?.to_vec();
            viewports.push(ViewportPayload { z, y });
        }
        if r.pos != bytes.len() {
            return Err(Error::corrupt(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Bitstream {
            header: BitstreamHeader {
                erp_width,
                erp_height,
                fov,
                viewport_width,
                viewport_height,
                plan_id,
                model_kind,
                use_vpct,
                lambda_index,
                model_hash,
            },
            viewports,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::corrupt(
                self.pos,
                format!("need {n} more bytes, only {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("slice length checked")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("slice length checked")))
    }
}
