//! Identifiers, digests, and the pluggable signature scheme shared by every
//! layer of the stack.
//!
//! Identifiers are cheap-to-clone interned strings. Ordering is always
//! lexicographic on the underlying text, which is what every tie-break rule
//! in the scheduler and executor relies on.

use std::fmt;
use std::sync::Arc;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

macro_rules! interned_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(s: impl AsRef<str>) -> Self {
                Self(Arc::from(s.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                ser.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
                let s = String::deserialize(de)?;
                Ok(Self::new(s))
            }
        }
    };
}

interned_id! {
    /// A network participant: compute node, IoT node, or service endpoint.
    NodeId
}
interned_id! {
    /// A task within a workflow graph.
    TaskId
}
interned_id! {
    /// A registered workflow graph.
    WorkflowId
}

/// Unique 128-bit identifier of a scheduling request, rendered as lowercase
/// hex. Issued once by the source node and immutable afterwards.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId([u8; 16]);

impl RequestId {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    /// Derives a request id from the issuing node and a per-node counter.
    /// Collision-free within a run because (source, counter) pairs are unique.
    pub fn derive(source: &NodeId, counter: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"request-id");
        h.update(source.as_str().as_bytes());
        h.update(counter.to_le_bytes());
        let out = h.finalize();
        let mut bytes = [0u8; 16];
        bytes.copy_from_slice(&out[..16]);
        Self(bytes)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        let bytes: [u8; 16] = raw.try_into().ok()?;
        Some(Self(bytes))
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RequestId({self})")
    }
}

impl Serialize for RequestId {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RequestId {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Self::parse(&s).ok_or_else(|| serde::de::Error::custom("malformed request id"))
    }
}

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn of(bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(bytes);
        Self(h.finalize().into())
    }

    pub fn parse(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        let bytes: [u8; 32] = raw.try_into().ok()?;
        Some(Self(bytes))
    }
}

/// Incremental digest builder for structured content; feeds length-prefixed
/// chunks so field boundaries cannot alias.
pub struct DigestBuilder(Sha256);

impl DigestBuilder {
    pub fn new(domain: &str) -> Self {
        let mut h = Sha256::new();
        h.update(domain.as_bytes());
        Self(h)
    }

    pub fn chunk(mut self, bytes: &[u8]) -> Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.chunk(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.chunk(&v.to_le_bytes())
    }

    pub fn digest(self, d: &Digest) -> Self {
        self.chunk(d.as_bytes())
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &hex::encode(&self.0[..4]))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Self::parse(&s).ok_or_else(|| serde::de::Error::custom("malformed digest"))
    }
}

/// Opaque signature bytes. The default scheme below is a keyless test stub;
/// real deployments plug in an asymmetric scheme behind [`SignatureScheme`].
pub type Signature = Digest;

/// Pluggable signing interface. Implementations must be deterministic so
/// replicas derive identical verdicts.
pub trait SignatureScheme: Send + Sync {
    fn sign(&self, signer: &NodeId, content: &Digest) -> Signature;
    fn verify(&self, signer: &NodeId, content: &Digest, sig: &Signature) -> bool;
}

/// Test stub: signature = digest(content ‖ signer). Unforgeable only against
/// honest-but-curious peers, which is all the simulation needs.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubSigner;

impl SignatureScheme for StubSigner {
    fn sign(&self, signer: &NodeId, content: &Digest) -> Signature {
        DigestBuilder::new("stub-signature")
            .digest(content)
            .str(signer.as_str())
            .finish()
    }

    fn verify(&self, signer: &NodeId, content: &Digest, sig: &Signature) -> bool {
        self.sign(signer, content) == *sig
    }
}

/// Simulated timestamps are real-valued milliseconds.
pub type SimMs = f64;
