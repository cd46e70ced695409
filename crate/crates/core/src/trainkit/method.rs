use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::SamplerSpec;
use crate::diffnet::Classifier;
use crate::error::{Error, Result};
use crate::gai::{GaiConfig, Variant};

/// Training methods compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Majority data only; the minority class is never seen.
    Unseen,
    Ib,
    Cb,
    Mixup,
    NoTeacher,
    GaiMinus,
    Gai,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Unseen,
        Method::Ib,
        Method::Cb,
        Method::Mixup,
        Method::NoTeacher,
        Method::GaiMinus,
        Method::Gai,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unseen => "unseen",
            Method::Ib => "ib",
            Method::Cb => "cb",
            Method::Mixup => "mixup",
            Method::NoTeacher => "no_teacher",
            Method::GaiMinus => "gai_minus",
            Method::Gai => "gai",
        }
    }

    /// Generator applied to minority duplicates, if any.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Unseen | Method::Ib | Method::Cb => None,
            Method::Mixup => Some(Variant::Mixup),
            Method::NoTeacher => Some(Variant::NoTeacher),
            Method::GaiMinus => Some(Variant::GaiMinus),
            Method::Gai => Some(Variant::Gai),
        }
    }

    pub fn needs_teacher(self) -> bool {
        self.variant().is_some_and(Variant::uses_teacher)
    }

    pub fn sampler(self) -> SamplerSpec {
        match self {
            Method::Unseen | Method::Ib => SamplerSpec::instance_balanced(),
            _ => SamplerSpec::class_balanced(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}, expected one of {}", names.join("|")))
            })
    }
}

/// A method together with the generator settings and teacher it needs.
#[derive(Clone, Debug)]
pub struct MethodSpec {
    pub method: Method,
    pub gai: GaiConfig,
    pub teacher: Option<Arc<Classifier>>,
    /// Overrides the method's default sampler.
    pub sampler: Option<SamplerSpec>,
}

impl MethodSpec {
    pub fn new(method: Method, gai: GaiConfig) -> Self {
        Self {
            method,
            gai,
            teacher: None,
            sampler: None,
        }
    }

    pub fn with_teacher(mut self, teacher: Arc<Classifier>) -> Self {
        self.teacher = Some(teacher);
        self
    }

    pub fn sampler(&self) -> SamplerSpec {
        self.sampler.unwrap_or_else(|| self.method.sampler())
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.variant().is_some() {
            self.gai.validate()?;
        }
        if self.method.needs_teacher() && self.teacher.is_none() {
            return Err(Error::contract(format!("method {} requires a teacher", self.method)));
        }
        self.sampler().validate()
    }
}
