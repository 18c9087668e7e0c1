// SPDX-License-Identifier: MIT OR Apache-2.0

//! Method dispatch: raw stream in, segmentation out.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::adwin::{self, AdwinConfig};
use crate::cluster::{self, AcConfig, BaselineConfig, Dendrogram, Linkage, Metric};
use crate::error::{Error, Result};
use crate::fusion::{self, GcConfig};
use crate::preprocess::{self, Prepared, PreprocessConfig};
use crate::stream::{FeatureStream, Segmentation, Source};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adwin,
    Ac,
    Rcluster,
    Kmeans,
    Meanshift,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Adwin,
        Method::Ac,
        Method::Rcluster,
        Method::Kmeans,
        Method::Meanshift,
    ];

    pub fn source(self) -> Source {
        match self {
            Method::Adwin => Source::Adwin,
            Method::Ac => Source::Ac,
            Method::Rcluster => Source::Rcluster,
            Method::Kmeans => Source::Kmeans,
            Method::Meanshift => Source::Meanshift,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.source().fmt(f)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// Every tunable of every method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub preprocess: PreprocessConfig,
    pub adwin: AdwinConfig,
    pub ac: AcConfig,
    pub gc: GcConfig,
    pub baseline: BaselineConfig,
}

impl MethodParams {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.adwin.validate()?;
        self.ac.validate()?;
        self.gc.validate()
    }
}

/// Memoizes the parameter-independent parts of a run on one stream:
/// the dendrogram per linkage and the ADWIN split per configuration.
#[derive(Debug)]
pub struct PreparedStream {
    pub prepared: Prepared,
    dendrograms: Mutex<HashMap<(Linkage, Metric), Arc<Dendrogram>>>,
    adwin: Mutex<HashMap<String, Segmentation>>,
}

impl PreparedStream {
    pub fn new(raw: &FeatureStream, cfg: &PreprocessConfig) -> Result<Self> {
        Ok(Self::from_prepared(preprocess::prepare(raw, cfg)?))
    }

    pub fn from_prepared(prepared: Prepared) -> Self {
        Self {
            prepared,
            dendrograms: Mutex::new(HashMap::new()),
            adwin: Mutex::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.prepared.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prepared.unary.is_empty()
    }

    fn dendrogram(&self, cfg: &AcConfig) -> Result<Arc<Dendrogram>> {
        let key = (cfg.linkage, cfg.metric);
        if let Some(d) = self.dendrograms.lock().unwrap().get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(cluster::linkage(&self.prepared.unary, cfg)?);
        self.dendrograms.lock().unwrap().insert(key, d.clone());
        Ok(d)
    }

    pub fn ac_labels(&self, cfg: &AcConfig) -> Result<Vec<usize>> {
        cfg.validate()?;
        if self.len() == 1 {
            return Ok(vec![0]);
        }
        Ok(cluster::cut_dendrogram(&*self.dendrogram(cfg)?, cfg.cut))
    }

    pub fn ac(&self, cfg: &AcConfig) -> Result<Segmentation> {
        Segmentation::from_labels(&self.ac_labels(cfg)?, Source::Ac)
    }

    pub fn adwin(&self, cfg: &AdwinConfig) -> Result<Segmentation> {
        let key = serde_json::to_string(cfg).expect("config serializes");
        if let Some(s) = self.adwin.lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let seg = adwin::detect_boundaries(&self.prepared.unary, cfg)?;
        self.adwin.lock().unwrap().insert(key, seg.clone());
        Ok(seg)
    }

    pub fn segment(&self, method: Method, params: &MethodParams) -> Result<Segmentation> {
        let x = &self.prepared.unary;
        match method {
            Method::Adwin => self.adwin(&params.adwin),
            Method::Ac => self.ac(&params.ac),
            Method::Rcluster => {
                let ac = self.ac(&params.ac)?;
                let adw = self.adwin(&params.adwin)?;
                fusion::rcluster(x, &self.prepared.pairwise, &ac, &adw, &params.gc)
            }
            Method::Kmeans => {
                Segmentation::from_labels(&cluster::kmeans(x, &params.baseline)?, Source::Kmeans)
            }
            Method::Meanshift => Segmentation::from_labels(
                &cluster::meanshift(x, &params.baseline)?,
                Source::Meanshift,
            ),
        }
    }
}

/// Preprocesses `raw` and runs one method on it.
pub fn segment(raw: &FeatureStream, method: Method, params: &MethodParams) -> Result<Segmentation> {
    params.validate()?;
    PreparedStream::new(raw, &params.preprocess)?.segment(method, params)
}
