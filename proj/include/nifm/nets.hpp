#pragma once

// Posterior networks: a 1-D CNN for single GARCH series and a Deep Sets
// network for copula data, both emitting Gaussian approximate posteriors over
// the unconstrained parameters, plus losses, training and checkpoints.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nifm/autodiff.hpp"
#include "nifm/copula.hpp"
#include "nifm/garch.hpp"
#include "nifm/priors.hpp"
#include "nifm/rng.hpp"
#include "nifm/types.hpp"

namespace nifm::nets {

// ---------------------------------------------------------------- posteriors

struct GaussianPosterior {
  enum class Kind { FullCholesky, MeanField };
  Kind kind = Kind::FullCholesky;
  Eigen::VectorXd mean;
  /// Lower Cholesky factor; diagonal holds the standard deviations for mean-field.
  Eigen::MatrixXd chol;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  Eigen::VectorXd sd() const;
  Eigen::MatrixXd covariance() const;
  void validate() const;
};

/// J x m draws of mean + L eta.
Matrix sample_posterior(const GaussianPosterior& q, std::size_t J, Rng& rng);
inline Eigen::VectorXd posterior_mean(const GaussianPosterior& q) { return q.mean; }
/// Log density of theta under q.
double posterior_logpdf(const GaussianPosterior& q, std::span<const double> theta);

// -------------------------------------------------------------------- losses

/// Batch mean of the full-Cholesky Gaussian negative log density.
/// mean, diag: [B, m]; lower: [B, m(m-1)/2] row-major strict lower triangle.
ad::Tensor nll_full(const ad::Tensor& mean, const ad::Tensor& diag, const ad::Tensor& lower, const Matrix& target);
/// Batch mean of the summed univariate Gaussian negative log densities.
/// mean, var: [B, m].
ad::Tensor nll_mean_field(const ad::Tensor& mean, const ad::Tensor& var, const Matrix& target);

// ------------------------------------------------------------------- layers

struct LinearLayer {
  ad::Tensor w, b;
  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, w, b); }
  std::size_t in() const { return w.dim(1); }
  std::size_t out() const { return w.dim(0); }
};

struct ConvLayer {
  ad::Tensor w, b;
  std::size_t stride = 2, padding = 1;
  ConvLayer() = default;
  ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
            Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::conv1d(x, w, b, stride, padding); }
};

struct BatchNormLayer {
  ad::Tensor gamma, beta;
  ad::BatchNormState state;
  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t features);
  ad::Tensor operator()(const ad::Tensor& x, bool training) { return ad::batchnorm1d(x, gamma, beta, state, training); }
};

/// One row of an architecture trace: layer name, output shape and parameter count.
struct LayerTrace {
  std::string name;
  ad::Shape in_shape;
  ad::Shape out_shape;
  std::size_t params = 0;
};

/// Shared base: ordered parameter list, batch-norm statistics and snapshots.
class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  virtual ~Network() = default;
  std::vector<ad::Tensor>& parameters() { return params_; }
  std::size_t parameter_count() const;
  /// Flat parameters followed by batch-norm running statistics.
  std::vector<double> state_vector() const;
  void load_state_vector(std::span<const double> v);
  virtual std::map<std::string, std::string> descriptor() const = 0;

 protected:
  void register_linear(LinearLayer& l);
  void register_conv(ConvLayer& c);
  void register_bn(BatchNormLayer& bn);

  std::vector<ad::Tensor> params_;
  std::vector<ad::BatchNormState*> bn_states_;
};

// ------------------------------------------------------------- marginal CNN

struct MarginalArch {
  std::size_t T = 200;
  garch::ErrorKind kind = garch::ErrorKind::Gaussian;
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::vector<std::size_t> head_hidden{512, 256, 128};

  /// Published widths.
  static MarginalArch full(std::size_t T, garch::ErrorKind kind);
  /// Reduced head widths for single-core CPU training.
  static MarginalArch desk(std::size_t T, garch::ErrorKind kind);

  std::size_t m() const { return static_cast<std::size_t>(garch::param_count(kind)); }
  std::size_t conv_length(std::size_t layer) const;
  std::size_t flat_features() const;
};

struct MarginalOutputs {
  ad::Tensor mean;   // [B, m]
  ad::Tensor diag;   // [B, m], softplus + 1e-6
  ad::Tensor lower;  // [B, m(m-1)/2]
};

class MarginalNet : public Network {
 public:
  MarginalNet(const MarginalArch& arch, std::uint64_t seed);

  const MarginalArch& arch() const { return arch_; }
  /// x: [B, T] raw series.
  MarginalOutputs forward(const ad::Tensor& x, bool training, std::vector<LayerTrace>* trace = nullptr);
  /// Eval-mode posteriors, one per column of `y` (T x D).
  std::vector<GaussianPosterior> posteriors(const Matrix& y);
  GaussianPosterior posterior(std::span<const double> y);

  std::map<std::string, std::string> descriptor() const override;
  static MarginalArch arch_from_descriptor(const std::map<std::string, std::string>& d);

 private:
  struct Head {
    std::vector<LinearLayer> layers;
  };
  ad::Tensor run_head(const Head& h, const ad::Tensor& x, const std::string& name, std::vector<LayerTrace>* trace) const;

  MarginalArch arch_;
  std::vector<ConvLayer> convs_;
  Head mean_head_, diag_head_, lower_head_;
};

// ------------------------------------------------------- copula Deep Sets

struct CopulaArch {
  std::size_t T = 200;
  int D = 3;
  int k = 1;
  copula::Family family = copula::Family::Gaussian;
  std::vector<std::size_t> encoder{64, 128, 256, 512};
  std::size_t projection = 0;  // optional Linear after pooling (0 = none)
  std::vector<std::size_t> trunk{1024, 512, 256, 128};

  /// Published widths: the one-factor table for k <= 3, the four-factor one above.
  static CopulaArch full(std::size_t T, int D, int k, copula::Family family);
  static CopulaArch desk(std::size_t T, int D, int k, copula::Family family);

  std::size_t m() const { return copula::CopulaParams::param_count(D, k, family); }
};

struct CopulaOutputs {
  ad::Tensor mean;  // [B, m] in CopulaParams::to_vector order
  ad::Tensor var;   // [B, m], softplus + 1e-6
};

class CopulaNet : public Network {
 public:
  CopulaNet(const CopulaArch& arch, std::uint64_t seed);

  const CopulaArch& arch() const { return arch_; }
  /// x: [B, T * D], each row a row-major T x D block.
  CopulaOutputs forward(const ad::Tensor& x, bool training, std::vector<LayerTrace>* trace = nullptr);
  GaussianPosterior posterior(const Matrix& u);

  std::map<std::string, std::string> descriptor() const override;
  static CopulaArch arch_from_descriptor(const std::map<std::string, std::string>& d);

 private:
  struct Trunk {
    std::vector<LinearLayer> linears;
    std::vector<BatchNormLayer> norms;
    std::vector<LinearLayer> factor_heads;
  };
  ad::Tensor run_trunk(Trunk& t, const ad::Tensor& pooled, bool training, const std::string& name,
                       std::vector<LayerTrace>* trace);

  CopulaArch arch_;
  std::vector<LinearLayer> encoder_;
  std::optional<LinearLayer> projection_;
  Trunk mean_trunk_, var_trunk_;
  std::vector<std::size_t> order_;  // head-concatenation order -> parameter vector order
};

// ----------------------------------------------------------------- training

struct TrainConfig {
  std::size_t batch = 32;
  ad::AdamConfig adam;
  std::size_t max_epochs = 4000;
  std::size_t patience = 100;
  std::size_t n_per_epoch = 30000;  // training plus validation draws
  double val_frac = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Reuse one training set every epoch instead of drawing fresh samples.
  bool fixed_dataset = false;
  /// Wall-clock cap in seconds (0 = none); training stops after the epoch that crosses it.
  double max_seconds = 0.0;
  std::function<void(std::size_t epoch, double train, double val)> on_epoch;
};

struct EpochLoss {
  std::size_t epoch;
  double train;
  double val;
};

struct TrainResult {
  std::vector<EpochLoss> curve;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  double initial_val = 0.0;
  double seconds = 0.0;
  std::string stop_reason;
};

TrainResult train_marginal(MarginalNet& net, const priors::PriorSpec& spec, const TrainConfig& cfg);
TrainResult train_copula(CopulaNet& net, const priors::PriorSpec& spec, const TrainConfig& cfg);

void write_loss_csv(const std::string& path, const TrainResult& r);

// --------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> descriptor;
  std::vector<double> payload;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
/// Throws IoError on missing files, bad magic, version mismatch or CRC failure.
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const Network& net, const std::map<std::string, std::string>& metadata = {});
MarginalNet marginal_from_checkpoint(const Checkpoint& c);
CopulaNet copula_from_checkpoint(const Checkpoint& c);

}  // namespace nifm::nets
