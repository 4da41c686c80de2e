#pragma once

// Training-set generation for both network stages and joint simulation of a
// copula model with GARCH(1,1) marginals.
//
// Sample i of a batch is drawn from its own generator seeded with
// Rng::derive(base_seed, first_index + i), so batches do not depend on how the
// work is split across threads.

#include <cstdint>
#include <vector>

#include "nifm/copula.hpp"
#include "nifm/garch.hpp"
#include "nifm/priors.hpp"
#include "nifm/types.hpp"

namespace nifm::simgen {

struct MarginalTrainingBatch {
  Matrix targets;  // B x m (transformed GARCH coordinates)
  Matrix inputs;   // B x T
};

struct CopulaTrainingBatch {
  Matrix targets;  // B x m_cop (G~ entries, then log(nu - 2) for the t family)
  Matrix inputs;   // B x (T * D), each row a row-major T x D block of U
  std::size_t T = 0;
  std::size_t D = 0;
};

struct SampleRange {
  std::uint64_t base_seed = 0;
  std::uint64_t first_index = 0;
  int threads = 1;
};

MarginalTrainingBatch gen_marginal_batch(const priors::PriorSpec& spec, std::size_t B, std::size_t T,
                                         const SampleRange& range);

CopulaTrainingBatch gen_copula_batch(const priors::PriorSpec& spec, copula::Family family, std::size_t B,
                                     std::size_t T, const SampleRange& range);

/// Standardised innovations for one series: N(0, 1) or unit-scale t.
std::vector<double> draw_innovations(const garch::GarchParams& p, std::size_t T, Rng& rng);

struct JointSample {
  Matrix y;  // T x D returns
  Matrix u;  // T x D copula data that generated them
  std::vector<garch::GarchParams> marginals;
  copula::CopulaParams copula;
};

/// Copula draw -> quantile transform to innovations -> GARCH recursion.
JointSample simulate_joint(const std::vector<garch::GarchParams>& marginals, const copula::CopulaParams& cop,
                           std::size_t T, Rng& rng);
/// The same with every parameter drawn from the prior.
JointSample simulate_joint(const priors::PriorSpec& spec, copula::Family family, std::size_t T, Rng& rng);

}  // namespace nifm::simgen
