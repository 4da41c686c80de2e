#include "nifm/simgen.hpp"

#include <algorithm>
#include <functional>
#include <thread>

#include "nifm/errors.hpp"

namespace nifm::simgen {
namespace {

// Runs body(i) for i in [0, n) over up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<double> draw_innovations(const garch::GarchParams& p, std::size_t T, Rng& rng) {
  std::vector<double> eps(T);
  for (auto& e : eps) e = p.error_kind == garch::ErrorKind::Gaussian ? rng.normal() : rng.student_t(*p.nu_tilde);
  return eps;
}

MarginalTrainingBatch gen_marginal_batch(const priors::PriorSpec& spec, std::size_t B, std::size_t T,
                                         const SampleRange& range) {
  if (T < 2) throw ConfigError("marginal batch: T must be at least 2");
  const auto m = static_cast<Eigen::Index>(garch::param_count(spec.marginal_kind));
  MarginalTrainingBatch batch{Matrix(static_cast<Eigen::Index>(B), m),
                              Matrix(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(T))};
  parallel_for(B, range.threads, [&](std::size_t i) {
    Rng rng(Rng::derive(range.base_seed, range.first_index + i));
    const auto p = priors::sample_garch(spec, rng);
    const auto theta = garch::to_unconstrained(p).to_vector();
    const auto y = garch::simulate(p, draw_innovations(p, T, rng));
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < m; ++j) batch.targets(r, j) = theta[static_cast<std::size_t>(j)];
    std::copy(y.begin(), y.end(), batch.inputs.row(r).data());
  });
  return batch;
}

CopulaTrainingBatch gen_copula_batch(const priors::PriorSpec& spec, copula::Family family, std::size_t B,
                                     std::size_t T, const SampleRange& range) {
  if (spec.dim < 2) throw ConfigError("copula batch: need D >= 2");
  const auto m = static_cast<Eigen::Index>(copula::CopulaParams::param_count(spec.dim, spec.n_factors, family));
  const auto D = static_cast<std::size_t>(spec.dim);
  CopulaTrainingBatch batch{Matrix(static_cast<Eigen::Index>(B), m),
                            Matrix(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(T * D)), T, D};
  parallel_for(B, range.threads, [&](std::size_t i) {
    Rng rng(Rng::derive(range.base_seed, range.first_index + i));
    const auto p = priors::sample_copula(spec, family, rng);
    const auto theta = p.to_vector();
    const Matrix u = copula::simulate_copula_data(p, T, rng);
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < m; ++j) batch.targets(r, j) = theta[static_cast<std::size_t>(j)];
    std::copy(u.data(), u.data() + u.size(), batch.inputs.row(r).data());
  });
  return batch;
}

JointSample simulate_joint(const std::vector<garch::GarchParams>& marginals, const copula::CopulaParams& cop,
                           std::size_t T, Rng& rng) {
  const int D = cop.loadings.dim;
  if (static_cast<int>(marginals.size()) != D)
    throw ShapeError("simulate_joint: " + std::to_string(marginals.size()) + " marginals for a D=" + std::to_string(D) +
                     " copula");
  JointSample s;
  s.marginals = marginals;
  s.copula = cop;
  s.u = copula::simulate_copula_data(cop, T, rng);
  s.y.resize(static_cast<Eigen::Index>(T), D);
  std::vector<double> eps(T);
  for (int d = 0; d < D; ++d) {
    marginals[static_cast<std::size_t>(d)].validate();
    for (std::size_t t = 0; t < T; ++t)
      eps[t] = garch::error_quantile(marginals[static_cast<std::size_t>(d)], s.u(static_cast<Eigen::Index>(t), d));
    const auto y = garch::simulate(marginals[static_cast<std::size_t>(d)], eps);
    for (std::size_t t = 0; t < T; ++t) s.y(static_cast<Eigen::Index>(t), d) = y[t];
  }
  return s;
}

JointSample simulate_joint(const priors::PriorSpec& spec, copula::Family family, std::size_t T, Rng& rng) {
  std::vector<garch::GarchParams> marginals;
  for (int d = 0; d < spec.dim; ++d) marginals.push_back(priors::sample_garch(spec, rng));
  const auto cop = priors::sample_copula(spec, family, rng);
  return simulate_joint(marginals, cop, T, rng);
}

}  // namespace nifm::simgen
