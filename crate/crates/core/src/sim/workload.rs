use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, Request};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Poisson arrivals with `rate` requests per second.
    Poisson { rate: f64 },
    /// Explicit non-decreasing arrival times in seconds.
    Trace { times: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthModel {
    Fixed {
        input_len: u32,
        output_len: u32,
    },
    /// Lengths drawn uniformly from inclusive ranges.
    Uniform {
        input_min: u32,
        input_max: u32,
        output_min: u32,
        output_max: u32,
    },
}

impl LengthModel {
    /// Largest lengths the model can produce.
    pub fn max_lengths(&self) -> (u32, u32) {
        match *self {
            LengthModel::Fixed {
                input_len,
                output_len,
            } => (input_len, output_len),
            LengthModel::Uniform {
                input_max,
                output_max,
                ..
            } => (input_max, output_max),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, LengthModel::Fixed { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub arrivals: ArrivalProcess,
    pub requests: usize,
    /// Source clients (indices); empty means every client.
    #[serde(default)]
    pub clients: Vec<usize>,
    pub lengths: LengthModel,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn poisson(rate: f64, requests: usize, input_len: u32, output_len: u32, seed: u64) -> Self {
        Self {
            arrivals: ArrivalProcess::Poisson { rate },
            requests,
            clients: Vec::new(),
            lengths: LengthModel::Fixed {
                input_len,
                output_len,
            },
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self, cluster: &Cluster) -> Result<()> {
        if self.requests == 0 {
            return Err(Error::Contract(
                "workload needs at least one request".into(),
            ));
        }
        match &self.arrivals {
            ArrivalProcess::Poisson { rate } if !(rate.is_finite() && *rate > 0.0) => {
                return Err(Error::Contract(format!(
                    "arrival rate must be positive, got {rate}"
                )));
            }
            ArrivalProcess::Trace { times } => {
                if times.len() != self.requests {
                    return Err(Error::Contract(format!(
                        "trace has {} arrivals but the workload declares {} requests",
                        times.len(),
                        self.requests
                    )));
                }
                if times.iter().any(|t| !t.is_finite() || *t < 0.0)
                    || times.windows(2).any(|w| w[1] < w[0])
                {
                    return Err(Error::Contract(
                        "trace arrival times must be finite, non-negative and sorted".into(),
                    ));
                }
            }
            _ => {}
        }
        if let Some(&c) = self.clients.iter().find(|&&c| c >= cluster.num_clients()) {
            return Err(Error::Contract(format!(
                "workload names unknown client index {c}"
            )));
        }
        let model = cluster.model();
        match self.lengths {
            LengthModel::Fixed {
                input_len,
                output_len,
            } => model.check_lengths(input_len, output_len)?,
            LengthModel::Uniform {
                input_min,
                input_max,
                output_min,
                output_max,
            } => {
                if input_min > input_max || output_min > output_max {
                    return Err(Error::Contract("length ranges must have min <= max".into()));
                }
                model.check_lengths(input_min, output_min)?;
                model.check_lengths(input_max, output_max)?;
            }
        }
        Ok(())
    }

    /// Mean arrival rate, used to size the target concurrency.
    pub fn mean_rate(&self) -> f64 {
        match &self.arrivals {
            ArrivalProcess::Poisson { rate } => *rate,
            ArrivalProcess::Trace { times } => {
                let span =
                    times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
                if span > 0.0 {
                    (times.len() - 1) as f64 / span
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Draws the requests; identical seeds give identical requests.
    pub fn generate(&self, cluster: &Cluster) -> Result<Vec<Request>> {
        self.validate(cluster)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let clients: Vec<usize> = if self.clients.is_empty() {
            (0..cluster.num_clients()).collect()
        } else {
            self.clients.clone()
        };
        let gap = match &self.arrivals {
            ArrivalProcess::Poisson { rate } => {
                Some(Exp::new(*rate).map_err(|e| Error::Contract(e.to_string()))?)
            }
            ArrivalProcess::Trace { .. } => None,
        };
        let mut now = 0.0;
        let mut out = Vec::with_capacity(self.requests);
        for i in 0..self.requests {
            let arrival = match (&self.arrivals, &gap) {
                (ArrivalProcess::Trace { times }, _) => times[i],
                (_, Some(exp)) => {
                    now += exp.sample(&mut rng);
                    now
                }
                _ => unreachable!(),
            };
            let client = clients[rng.random_range(0..clients.len())];
            let (input_len, output_len) = match self.lengths {
                LengthModel::Fixed {
                    input_len,
                    output_len,
                } => (input_len, output_len),
                LengthModel::Uniform {
                    input_min,
                    input_max,
                    output_min,
                    output_max,
                } => (
                    rng.random_range(input_min..=input_max),
                    rng.random_range(output_min..=output_max),
                ),
            };
            out.push(Request {
                id: i as u64,
                client,
                arrival,
                input_len,
                output_len,
            });
        }
        Ok(out)
    }
}
