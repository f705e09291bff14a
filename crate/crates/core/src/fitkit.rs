//! Group-wise estimation, sub-sampled MSE statistics, and the scaling model
//! N·MSE(N) = C + δN.
//!
//! Every outcome label maps to a fixed Bloch vector once mitigation, the
//! linear estimator, the frame rotation and the calibration offset are
//! folded together, so a group estimate is the count-weighted mean of four
//! precomputed vectors.
//!
//! Error bars on the sub-sampled MSE come from a shot-level bootstrap: the
//! outcome counts are resampled multinomially and, for each replicate, the
//! partition-averaged scaled MSE is evaluated in closed form,
//! `N|x̄ − θ|² + S²(n − N)/(n − 1)`, where `x̄` and `S²` are the mean and
//! population variance of the per-shot vectors. The reported standard error
//! adds the spread of the finite set of partition instances.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noisekit::{counts, CalibrationOffset, ConfusionMatrix, ShotRecord};
use crate::par;
use crate::povm::StMeasurement;
use crate::qstate::BlochVector;
use crate::rng::{multinomial4, stream_rng, substream_seed};

pub const DEFAULT_INSTANCES: usize = 10_000;
pub const DEFAULT_RESAMPLES: usize = 1_000;

/// Frequency → mitigation → estimate → offset, folded into one vector per label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationPipeline {
    label_vectors: [Vector3<f64>; 4],
}

impl EstimationPipeline {
    pub fn new(
        measurement: &StMeasurement,
        mitigation: Option<&ConfusionMatrix>,
        offset: Option<&CalibrationOffset>,
    ) -> Result<Self> {
        let inv = match mitigation {
            Some(m) => m.inverse()?,
            None => nalgebra::Matrix4::identity(),
        };
        let delta = offset.map_or(Vector3::zeros(), |o| o.delta_theta.to_vector());
        let label_vectors = std::array::from_fn(|k| {
            let col = inv.column(k);
            let f: [f64; 4] = [col[0], col[1], col[2], col[3]];
            measurement.frame.apply_inverse(measurement.estimator.apply(&f)).to_vector() - delta
        });
        Ok(EstimationPipeline { label_vectors })
    }

    /// Ideal pipeline for the record's own POVM.
    pub fn for_record(record: &ShotRecord) -> Result<Self> {
        EstimationPipeline::new(&StMeasurement::new(record.povm_params)?, None, None)
    }

    pub fn label_vectors(&self) -> [BlochVector; 4] {
        self.label_vectors.map(BlochVector::from)
    }

    pub fn estimate_counts(&self, c: &[u64; 4]) -> BlochVector {
        let n: u64 = c.iter().sum();
        let s: Vector3<f64> = (0..4).map(|k| self.label_vectors[k] * c[k] as f64).sum();
        (s / n as f64).into()
    }

    pub fn estimate_frequencies(&self, f: &[f64; 4]) -> BlochVector {
        (0..4).map(|k| self.label_vectors[k] * f[k]).sum::<Vector3<f64>>().into()
    }

    /// Closed-form partition average of N·mean_g |θ̂_g − θ|² for fixed counts.
    fn partition_average(&self, c: &[u64; 4], theta: &Vector3<f64>, group: usize) -> f64 {
        let n: u64 = c.iter().sum();
        let nf = n as f64;
        let mut mean = Vector3::zeros();
        let mut second = 0.0;
        for (v, &ck) in self.label_vectors.iter().zip(c) {
            let w = ck as f64 / nf;
            mean += v * w;
            second += w * v.norm_squared();
        }
        let s2 = second - mean.norm_squared();
        let g = group as f64;
        let fpc = if n > 1 { (nf - g) / (nf - 1.0) } else { 0.0 };
        g * (mean - theta).norm_squared() + s2.max(0.0) * fpc
    }
}

/// One θ̂ per consecutive group of `group_size` shots; leftovers are dropped.
pub fn group_estimates(
    record: &ShotRecord,
    group_size: usize,
    pipeline: &EstimationPipeline,
) -> Result<Vec<BlochVector>> {
    check_group(record.outcomes.len(), group_size)?;
    Ok(record
        .outcomes
        .chunks_exact(group_size)
        .map(|g| pipeline.estimate_counts(&counts(g)))
        .collect())
}

fn check_group(len: usize, group_size: usize) -> Result<()> {
    if group_size == 0 || group_size > len {
        return Err(Error::GroupTooLarge { group_size, len });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleOptions {
    pub n_instances: usize,
    pub n_resamples: usize,
    pub seed: u64,
}

impl Default for SubsampleOptions {
    fn default() -> Self {
        SubsampleOptions {
            n_instances: DEFAULT_INSTANCES,
            n_resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleStats {
    pub group_size: usize,
    pub n_groups: usize,
    /// N·mean |θ̂ − θ|² averaged over partition instances.
    pub mean_scaled_mse: f64,
    /// Standard error of `mean_scaled_mse`: shot-level bootstrap spread
    /// combined with the finite-instance Monte Carlo spread.
    pub std_err: f64,
    /// Exact partition average the instances converge to.
    pub partition_limit: f64,
}

/// Scaled MSE by repeated random partitioning of the record.
///
/// Instance 0 uses the record order (so one instance is plain grouping);
/// instance i ≥ 1 uses a Fisher–Yates shuffle on its own RNG stream.
pub fn mse_by_subsampling(
    record: &ShotRecord,
    group_size: usize,
    pipeline: &EstimationPipeline,
    opts: &SubsampleOptions,
) -> Result<SubsampleStats> {
    let n = record.outcomes.len();
    check_group(n, group_size)?;
    if opts.n_instances == 0 {
        return Err(Error::param("n_instances must be at least 1"));
    }
    let theta = record.true_theta.to_vector();
    let n_groups = n / group_size;
    let shuffle_seed = substream_seed(opts.seed, "subsample");
    let scale = group_size as f64 / n_groups as f64;
    let instance_mse = |outcomes: &[u8]| -> f64 {
        outcomes
            .chunks_exact(group_size)
            .map(|g| {
                let e = pipeline.estimate_counts(&counts(g)).to_vector();
                (e - theta).norm_squared()
            })
            .sum::<f64>()
            * scale
    };
    let values = par::map_indexed(opts.n_instances, |i| {
        if i == 0 {
            instance_mse(&record.outcomes)
        } else {
            let mut buf = record.outcomes.clone();
            buf.shuffle(&mut stream_rng(shuffle_seed, i as u64));
            instance_mse(&buf)
        }
    });
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let mc_var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k
    } else {
        0.0
    };
    let c = record.counts();
    let (_, data_sd) = bootstrap(pipeline, &c, &theta, group_size, opts)?;
    Ok(SubsampleStats {
        group_size,
        n_groups,
        mean_scaled_mse: mean,
        std_err: (data_sd * data_sd + mc_var).sqrt(),
        partition_limit: pipeline.partition_average(&c, &theta, group_size),
    })
}

/// Mean and standard deviation of the closed-form statistic over shot-level resamples.
fn bootstrap(
    pipeline: &EstimationPipeline,
    c: &[u64; 4],
    theta: &Vector3<f64>,
    group: usize,
    opts: &SubsampleOptions,
) -> Result<(f64, f64)> {
    if opts.n_resamples < 2 {
        return Err(Error::param("n_resamples must be at least 2"));
    }
    let n: u64 = c.iter().sum();
    let p = c.map(|x| x as f64 / n as f64);
    let seed = substream_seed(opts.seed, "bootstrap");
    let reps = par::map_indexed(opts.n_resamples, |b| {
        let mut rng = stream_rng(seed, b as u64);
        let star = multinomial4(n, &p, &mut rng);
        pipeline.partition_average(&star, theta, group)
    });
    let m = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    Ok((m, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub n: u64,
    pub mean_scaled_mse: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub points: Vec<MsePoint>,
    pub n_resamples: usize,
}

impl MseCurve {
    /// Sorts by N and rejects duplicates or negative errors.
    pub fn new(mut points: Vec<MsePoint>, n_resamples: usize) -> Result<Self> {
        points.sort_by_key(|p| p.n);
        if points.windows(2).any(|w| w[0].n == w[1].n) {
            return Err(Error::param("duplicate N in MSE curve"));
        }
        if points.iter().any(|p| !(p.std_err >= 0.0) || !p.mean_scaled_mse.is_finite()) {
            return Err(Error::param("MSE curve needs finite values and std_err >= 0"));
        }
        Ok(MseCurve {
            points,
            n_resamples,
        })
    }
}

/// Sub-sampled scaled MSE at each group size of one record.
///
/// All points share the same shots, so their errors are correlated.
pub fn mse_curve(
    record: &ShotRecord,
    group_sizes: &[usize],
    pipeline: &EstimationPipeline,
    opts: &SubsampleOptions,
) -> Result<MseCurve> {
    let points = group_sizes
        .iter()
        .map(|&g| {
            let s = mse_by_subsampling(record, g, pipeline, opts)?;
            Ok(MsePoint {
                n: g as u64,
                mean_scaled_mse: s.mean_scaled_mse,
                std_err: s.std_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MseCurve::new(points, opts.n_resamples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub c: f64,
    pub delta: f64,
    pub c_err: f64,
    pub delta_err: f64,
}

/// Weighted least squares of N·MSE = C + δN with weights 1/std_err².
///
/// Parameter errors come from the unscaled covariance (XᵀWX)⁻¹. When every
/// std_err is zero the data are treated as exact: equal weights, zero errors.
pub fn fit_scaling_model(curve: &MseCurve) -> Result<ScalingFit> {
    let mut pts = curve.points.clone();
    pts.sort_by_key(|p| p.n);
    pts.dedup_by_key(|p| p.n);
    if pts.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 distinct N values".into()));
    }
    let exact = pts.iter().all(|p| p.std_err == 0.0);
    if !exact && pts.iter().any(|p| !(p.std_err > 0.0) || !p.std_err.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    // Centre N for conditioning.
    let n_mean = pts.iter().map(|p| p.n as f64).sum::<f64>() / pts.len() as f64;
    let mut xtwx = Matrix2::<f64>::zeros();
    let mut xtwy = Vector2::<f64>::zeros();
    for p in &pts {
        let w = if exact { 1.0 } else { p.std_err.powi(-2) };
        let x = Vector2::new(1.0, p.n as f64 - n_mean);
        xtwx += x * x.transpose() * w;
        xtwy += x * (w * p.mean_scaled_mse);
    }
    let cov = xtwx.try_inverse().ok_or(Error::DegenerateWeights)?;
    let beta = cov * xtwy;
    let delta = beta[1];
    let c = beta[0] - delta * n_mean;
    let (c_err, delta_err) = if exact {
        (0.0, 0.0)
    } else {
        let var_c = cov[(0, 0)] - 2.0 * n_mean * cov[(0, 1)] + n_mean * n_mean * cov[(1, 1)];
        (var_c.max(0.0).sqrt(), cov[(1, 1)].sqrt())
    };
    Ok(ScalingFit {
        c,
        delta,
        c_err,
        delta_err,
    })
}
