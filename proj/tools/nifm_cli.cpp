// nifm: command-line front end for simulation, training, inference,
// validation and the MCMC reference sampler.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nifm/config.hpp"
#include "nifm/errors.hpp"
#include "nifm/inference.hpp"
#include "nifm/io.hpp"
#include "nifm/nets.hpp"
#include "nifm/oracle.hpp"
#include "nifm/predict.hpp"
#include "nifm/priors.hpp"
#include "nifm/simgen.hpp"

namespace fs = std::filesystem;
using namespace nifm;

namespace {

// ------------------------------------------------------------ option plumbing

struct Common {
  std::string config;
  std::string out_dir = ".";
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value configuration file (flags override it)");
  sub->add_option("--out-dir", c.out_dir, "Directory for outputs (created if missing)");
}

/// One --key flag per configuration key; underscores also accept hyphens.
void add_keys(CLI::App* sub, Common& c, const std::vector<std::string>& keys) {
  for (const auto& k : keys) {
    std::string names = "--" + k;
    std::string hyphen = k;
    std::replace(hyphen.begin(), hyphen.end(), '_', '-');
    if (hyphen != k) names += ",--" + hyphen;
    c.options.emplace_back(k, sub->add_option(names, c.values[k]));
  }
}

void add_prior_keys(CLI::App* sub, Common& c) {
  std::vector<std::string> keys;
  for (const auto& k : config::ExperimentConfig::keys())
    if (k.rfind("prior_", 0) == 0) keys.push_back(k);
  add_keys(sub, c, keys);
}

/// Config file first, then flags; `forced` entries come from the data itself.
config::ExperimentConfig build_config(const Common& c, const io::KeyValues& forced = {}) {
  io::KeyValues kv;
  if (!c.config.empty()) kv = io::read_config(c.config, config::ExperimentConfig::keys());
  for (const auto& [k, opt] : c.options)
    if (opt->count()) kv[k] = c.values.at(k);
  for (const auto& [k, v] : forced) {
    if (kv.count(k) && kv[k] != v) throw ConfigError(k + ": configured as " + kv[k] + " but the data implies " + v);
    kv[k] = v;
  }
  config::ExperimentConfig cfg;
  cfg.apply(kv);
  cfg.validate();
  return cfg;
}

std::string ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
  return dir;
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + ": no path given");
  if (!fs::is_regular_file(path)) throw IoError(what + ": no such file " + path);
}

// ------------------------------------------------------------------- outputs

struct Summary {
  std::vector<std::string> names;
  std::vector<double> mean, sd;
  std::vector<std::optional<double>> truth;
};

void append(Summary& s, const std::vector<std::string>& names, const Eigen::VectorXd& mean, const Eigen::VectorXd& sd,
            const std::optional<std::vector<double>>& truth) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    s.names.push_back(names[i]);
    s.mean.push_back(mean(static_cast<Eigen::Index>(i)));
    s.sd.push_back(sd(static_cast<Eigen::Index>(i)));
    s.truth.push_back(truth ? std::optional<double>((*truth)[i]) : std::nullopt);
  }
}

/// parameter,mean,sd[,truth,z]; the same layout for network and MCMC output.
void write_summary(const std::string& path, const Summary& s, bool with_truth) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "parameter,mean,sd" << (with_truth ? ",truth,z" : "") << '\n';
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    f << s.names[i] << ',' << s.mean[i] << ',' << s.sd[i];
    if (with_truth) {
      if (s.truth[i])
        f << ',' << *s.truth[i] << ',' << (s.mean[i] - *s.truth[i]) / s.sd[i];
      else
        f << ",,";
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

constexpr int kGrid = 200;

/// parameter,x,density over mean +- 4 sd.
void write_density(const std::string& path, const Summary& s,
                   const std::function<std::vector<double>(std::size_t, const std::vector<double>&)>& density) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "parameter,x,density\n";
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    std::vector<double> grid(kGrid);
    for (int g = 0; g < kGrid; ++g) grid[g] = s.mean[i] + s.sd[i] * (-4.0 + 8.0 * g / (kGrid - 1));
    const auto d = density(i, grid);
    for (int g = 0; g < kGrid; ++g) f << s.names[i] << ',' << grid[g] << ',' << d[g] << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

void print_summary(const Summary& s) {
  std::printf("%-12s %12s %12s\n", "parameter", "mean", "sd");
  for (std::size_t i = 0; i < s.names.size(); ++i)
    std::printf("%-12s %12.5f %12.5f\n", s.names[i].c_str(), s.mean[i], s.sd[i]);
}

/// Transformed truth values per parameter block, or nothing when the truth
/// describes a different model.
struct TruthVectors {
  std::vector<std::optional<std::vector<double>>> marginals;
  std::optional<std::vector<double>> copula;
};

TruthVectors truth_vectors(const std::optional<io::Truth>& truth, int D, garch::ErrorKind kind, int k,
                           copula::Family family) {
  TruthVectors t;
  t.marginals.resize(static_cast<std::size_t>(D));
  if (!truth) return t;
  if (static_cast<int>(truth->marginals.size()) != D)
    throw ConfigError("truth file describes " + std::to_string(truth->marginals.size()) + " series, data has " +
                      std::to_string(D));
  for (int d = 0; d < D; ++d)
    if (truth->marginals[d].error_kind == kind) t.marginals[d] = garch::to_unconstrained(truth->marginals[d]).to_vector();
  if (truth->copula && k > 0 && truth->copula->loadings.n_factors == k && truth->copula->family == family)
    t.copula = truth->copula->to_vector();
  else if (k > 0)
    std::cerr << "note: truth copula does not match the fitted model; copula truth columns left empty\n";
  return t;
}

std::optional<io::Truth> load_truth(const std::string& path) {
  if (path.empty()) return std::nullopt;
  require_file(path, "--truth");
  return io::read_truth(path);
}

// -------------------------------------------------------------- subcommands

int cmd_simulate(const Common& c) {
  const auto cfg = build_config(c);
  const std::string dir = ensure_dir(c.out_dir);
  Rng rng(cfg.seed);
  io::Truth truth;
  for (int d = 0; d < cfg.D; ++d) truth.marginals.push_back(priors::sample_garch(cfg.prior, rng));
  copula::CopulaParams cop{copula::FactorLoadings::zeros(cfg.D, 0), copula::Family::Gaussian, std::nullopt};
  if (cfg.k > 0) {
    cop = priors::sample_copula(cfg.prior, cfg.family, rng);
    truth.copula = cop;
  }
  const auto sim = simgen::simulate_joint(truth.marginals, cop, cfg.T, rng);
  io::write_dataset(join(dir, "data.csv"), sim.y);
  io::write_truth(join(dir, "truth.txt"), truth);
  std::printf("wrote %s (%zu x %d) and %s\n", join(dir, "data.csv").c_str(), cfg.T, cfg.D, join(dir, "truth.txt").c_str());
  return 0;
}

std::map<std::string, std::string> prior_metadata(const config::ExperimentConfig& cfg, std::size_t epochs_done) {
  std::map<std::string, std::string> m{{"meta.epochs_done", std::to_string(epochs_done)},
                                       {"meta.seed", std::to_string(cfg.seed)}};
  std::istringstream is(priors::describe(cfg.prior));
  std::string line;
  while (std::getline(is, line))
    if (const auto eq = line.find('='); eq != std::string::npos) m["meta." + line.substr(0, eq)] = line.substr(eq + 1);
  return m;
}

template <class Net>
int run_training(const config::ExperimentConfig& cfg, const Common& c, bool dry_run, const std::string& resume,
                 const std::string& stem, const std::function<Net()>& make,
                 const std::function<Net(const nets::Checkpoint&)>& load,
                 const std::function<nets::TrainResult(Net&, const priors::PriorSpec&, const nets::TrainConfig&)>& train) {
  Net fresh = make();
  std::size_t epochs_done = 0;
  std::optional<Net> resumed;
  if (!resume.empty()) {
    require_file(resume, "--resume");
    const auto ck = nets::load_checkpoint(resume);
    for (const auto& [k, v] : fresh.descriptor()) {
      const auto it = ck.descriptor.find(k);
      if (it == ck.descriptor.end() || it->second != v)
        throw ShapeError("--resume: checkpoint field '" + k + "' is " +
                         (it == ck.descriptor.end() ? std::string("missing") : it->second) + ", config gives " + v);
    }
    if (const auto it = ck.descriptor.find("meta.epochs_done"); it != ck.descriptor.end())
      epochs_done = std::stoull(it->second);
    resumed.emplace(load(ck));
  }
  Net& net = resumed ? *resumed : fresh;
  std::printf("trainable parameters: %zu\n", net.parameter_count());
  if (dry_run) {
    std::printf("configuration is valid (dry run, nothing trained)\n%s", cfg.to_text().c_str());
    return 0;
  }
  const std::string dir = ensure_dir(c.out_dir);
  auto tc = cfg.train_config();
  // a resumed run continues the sample stream instead of replaying it
  if (epochs_done > 0) tc.seed = Rng::derive(cfg.seed, epochs_done);
  tc.on_epoch = [](std::size_t e, double tr, double va) {
    if (e % 10 == 0) std::fprintf(stderr, "epoch %zu train %.5f val %.5f\n", e, tr, va);
  };
  const auto r = train(net, cfg.prior, tc);
  const std::string ckpt = join(dir, stem + ".ckpt");
  nets::save_checkpoint(ckpt, nets::make_checkpoint(net, prior_metadata(cfg, epochs_done + r.epochs_run)));
  nets::write_loss_csv(join(dir, stem + "_loss.csv"), r);
  std::ofstream(join(dir, stem + ".cfg")) << cfg.to_text();
  std::printf("epochs %zu (best %zu, val %.5f from %.5f), stopped: %s, %.1f s\nwrote %s\n", r.epochs_run, r.best_epoch,
              r.best_val, r.initial_val, r.stop_reason.c_str(), r.seconds, ckpt.c_str());
  return 0;
}

int cmd_train_marginal(const Common& c, bool dry_run, const std::string& resume) {
  const auto cfg = build_config(c);
  return run_training<nets::MarginalNet>(
      cfg, c, dry_run, resume, "marginal", [&] { return nets::MarginalNet(cfg.marginal_arch(), cfg.seed); },
      nets::marginal_from_checkpoint, nets::train_marginal);
}

int cmd_train_copula(const Common& c, bool dry_run, const std::string& resume) {
  const auto cfg = build_config(c);
  if (cfg.k < 1) throw ConfigError("k: the copula network needs k >= 1 (k=0 is the independence model)");
  return run_training<nets::CopulaNet>(
      cfg, c, dry_run, resume, "copula", [&] { return nets::CopulaNet(cfg.copula_arch(), cfg.seed); },
      nets::copula_from_checkpoint, nets::train_copula);
}

struct LoadedNets {
  nets::MarginalNet marginal;
  std::optional<nets::CopulaNet> copula;
  nets::CopulaNet* copula_ptr() { return copula ? &*copula : nullptr; }
};

LoadedNets load_nets(const std::string& marginal_path, const std::string& copula_path) {
  require_file(marginal_path, "--marginal");
  LoadedNets n{nets::marginal_from_checkpoint(nets::load_checkpoint(marginal_path)), std::nullopt};
  if (!copula_path.empty() && copula_path != "none") {
    require_file(copula_path, "--copula");
    n.copula.emplace(nets::copula_from_checkpoint(nets::load_checkpoint(copula_path)));
  }
  return n;
}

std::vector<std::string> all_names(const inference::NifmResult& r) {
  std::vector<std::string> names;
  for (int d = 0; d < r.D; ++d)
    for (auto& n : inference::marginal_param_names(r.marginal_kind, d)) names.push_back(n);
  if (r.k > 0)
    for (auto& n : inference::copula_param_names(r.D, r.k, r.family)) names.push_back(n);
  return names;
}

int cmd_infer(const Common& c, const std::string& data_path, const std::string& marginal_path,
              const std::string& copula_path, const std::string& truth_path, bool want_draws) {
  require_file(data_path, "--data");
  const auto y = io::read_dataset(data_path);
  auto nets = load_nets(marginal_path, copula_path);
  const auto truth = load_truth(truth_path);
  const auto cfg = build_config(c);
  const std::string dir = ensure_dir(c.out_dir);

  inference::InferOptions opts;
  opts.plugin = cfg.plugin;
  opts.seed = cfg.seed;
  const auto r = inference::infer(nets.marginal, nets.copula_ptr(), y, opts);

  const auto tv = truth_vectors(truth, r.D, r.marginal_kind, r.k, r.family);
  Summary s;
  for (int d = 0; d < r.D; ++d) {
    const auto& q = r.marginal_posteriors[d];
    append(s, inference::marginal_param_names(r.marginal_kind, d), q.mean, q.sd(), tv.marginals[d]);
  }
  if (r.copula_posterior)
    append(s, inference::copula_param_names(r.D, r.k, r.family), r.copula_posterior->mean, r.copula_posterior->sd(),
           tv.copula);
  write_summary(join(dir, "posterior_summary.csv"), s, truth.has_value());
  write_density(join(dir, "posterior_density.csv"), s, [&](std::size_t i, const std::vector<double>& grid) {
    std::vector<double> out;
    for (double x : grid) {
      const double z = (x - s.mean[i]) / s.sd[i];
      out.push_back(std::exp(-0.5 * z * z) / (s.sd[i] * std::sqrt(2.0 * std::numbers::pi)));
    }
    return out;
  });
  std::ofstream(join(dir, "report.json")) << r.to_json() << '\n';
  io::write_csv(join(dir, "copula_data.csv"), io::dataset_header(r.D), r.copula_data);

  if (want_draws) {
    Rng rng(Rng::derive(cfg.seed, 1));
    const auto draws = inference::joint_posterior_sample(r, cfg.J, rng);
    Matrix all(static_cast<Eigen::Index>(cfg.J), draws.marginal_transformed.cols() + draws.copula_transformed.cols());
    all << draws.marginal_transformed, draws.copula_transformed;
    io::write_csv(join(dir, "posterior_draws.csv"), all_names(r), all);
  }
  print_summary(s);
  std::printf("inference wall time: %.4f s\n", r.seconds);
  return 0;
}

Matrix limit_rows(const Matrix& y, std::size_t T, std::size_t K) {
  if (K == 0) return y;
  if (static_cast<std::size_t>(y.rows()) < T + K)
    throw ConfigError("K: need T + K = " + std::to_string(T + K) + " rows, data has " + std::to_string(y.rows()));
  return y.topRows(static_cast<Eigen::Index>(T + K));
}

void print_ranking(const std::vector<predict::ValidationReport>& ranked) {
  std::printf("%-5s %-20s %14s %10s\n", "rank", "label", "LPDS", "seconds");
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::printf("%-5zu %-20s %14.4f %10.2f\n", i + 1, ranked[i].label.c_str(), ranked[i].lpds, ranked[i].seconds);
}

int cmd_validate(const Common& c, const std::string& data_path, const std::string& marginal_path,
                 const std::string& copula_path, std::string label) {
  require_file(data_path, "--data");
  const auto full = io::read_dataset(data_path);
  auto nets = load_nets(marginal_path, copula_path);
  const auto cfg = build_config(c);
  const std::string dir = ensure_dir(c.out_dir);
  const std::size_t T = nets.marginal.arch().T;
  if (label.empty()) label = nets.copula ? "k" + std::to_string(nets.copula->arch().k) : "k0";
  inference::InferOptions opts{cfg.plugin, 1000, cfg.seed};
  const auto rep = predict::rolling_validate(predict::network_sampler(nets.marginal, nets.copula_ptr(), opts),
                                             limit_rows(full, T, cfg.K), T, cfg.h, cfg.J, cfg.seed, label);
  predict::write_report_csv(join(dir, "validate_" + label + ".csv"), rep);
  print_ranking({rep});
  return 0;
}

int cmd_compare(const Common& c, const std::string& data_path, const std::string& marginal_path,
                const std::vector<std::string>& specs) {
  require_file(data_path, "--data");
  const auto full = io::read_dataset(data_path);
  if (specs.empty()) throw ConfigError("--candidate: give at least one label=copula_checkpoint (or label=none)");
  auto base = load_nets(marginal_path, "");
  std::vector<std::pair<std::string, std::optional<nets::CopulaNet>>> loaded;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--candidate: expected label=path, got '" + s + "'");
    const std::string label = s.substr(0, eq), path = s.substr(eq + 1);
    std::optional<nets::CopulaNet> net;
    if (path != "none") {
      require_file(path, "--candidate " + label);
      net.emplace(nets::copula_from_checkpoint(nets::load_checkpoint(path)));
    }
    loaded.emplace_back(label, std::move(net));
  }
  const auto cfg = build_config(c);
  const std::string dir = ensure_dir(c.out_dir);
  const std::size_t T = base.marginal.arch().T;
  inference::InferOptions opts{cfg.plugin, 1000, cfg.seed};
  std::vector<predict::Candidate> cands;
  for (auto& [label, net] : loaded)
    cands.push_back({label, predict::network_sampler(base.marginal, net ? &*net : nullptr, opts)});
  const auto ranked = predict::compare_models(cands, limit_rows(full, T, cfg.K), T, cfg.h, cfg.J, cfg.seed);
  for (const auto& r : ranked) predict::write_report_csv(join(dir, "validate_" + r.label + ".csv"), r);
  predict::write_ranking_csv(join(dir, "ranking.csv"), ranked);
  print_ranking(ranked);
  return 0;
}

int cmd_oracle(const Common& c, const std::string& data_path, const std::string& truth_path) {
  require_file(data_path, "--data");
  const auto y = io::read_dataset(data_path);
  const auto truth = load_truth(truth_path);
  const auto cfg = build_config(c, {{"D", std::to_string(y.cols())}});
  const std::string dir = ensure_dir(c.out_dir);
  ensure_dir(join(dir, "chains"));

  const auto run = oracle::run_ifm(y, cfg.prior, cfg.family, cfg.mcmc_config(), cfg.chains, cfg.seed, cfg.threads);

  const auto tv = truth_vectors(truth, cfg.D, cfg.marginal_kind, cfg.k, cfg.family);
  Summary s;
  std::vector<Matrix> pooled_blocks;
  std::vector<double> ess, rhat;
  auto block = [&](const std::vector<oracle::McmcChain>& chains, const std::vector<std::string>& names,
                   const std::string& stem, const std::optional<std::vector<double>>& tr) {
    for (std::size_t ci = 0; ci < chains.size(); ++ci)
      oracle::write_chain_csv(join(join(dir, "chains"), stem + "_chain" + std::to_string(ci + 1) + ".csv"), chains[ci],
                              names);
    const Matrix all = oracle::pooled(chains);
    const Eigen::VectorXd mean = all.colwise().mean();
    const Eigen::VectorXd sd = ((all.rowwise() - mean.transpose()).array().square().colwise().sum() /
                                static_cast<double>(all.rows() - 1))
                                   .sqrt();
    append(s, names, mean, sd, tr);
    std::vector<Matrix> draws;
    for (const auto& ch : chains) draws.push_back(ch.draws);
    const auto dg = oracle::diagnostics(draws);
    ess.insert(ess.end(), dg.ess.begin(), dg.ess.end());
    rhat.insert(rhat.end(), dg.rhat.begin(), dg.rhat.end());
    for (Eigen::Index j = 0; j < all.cols(); ++j) pooled_blocks.push_back(all.col(j));
  };
  for (int d = 0; d < cfg.D; ++d)
    block(run.marginal_chains[d], inference::marginal_param_names(cfg.marginal_kind, d), "y" + std::to_string(d + 1),
          tv.marginals[d]);
  if (!run.copula_chains.empty())
    block(run.copula_chains, inference::copula_param_names(cfg.D, cfg.k, cfg.family), "copula", tv.copula);

  write_summary(join(dir, "posterior_summary.csv"), s, truth.has_value());
  write_density(join(dir, "posterior_density.csv"), s, [&](std::size_t i, const std::vector<double>& grid) {
    const Matrix& col = pooled_blocks[i];
    return predict::kde(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), grid);
  });
  {
    std::ofstream f(join(dir, "diagnostics.csv"));
    if (!f) throw IoError("cannot write diagnostics.csv");
    f.precision(10);
    f << "parameter,n_eff,Rhat\n";
    for (std::size_t i = 0; i < s.names.size(); ++i) f << s.names[i] << ',' << ess[i] << ',' << rhat[i] << '\n';
  }
  nlohmann::json j;
  j["seconds"] = run.seconds;
  j["chains"] = cfg.chains;
  j["n_iter"] = cfg.mcmc_iter;
  j["n_burn"] = cfg.mcmc_burn;
  for (int d = 0; d < cfg.D; ++d)
    for (const auto& ch : run.marginal_chains[d]) j["acceptance"]["y" + std::to_string(d + 1)].push_back(ch.acceptance);
  for (const auto& ch : run.copula_chains) j["acceptance"]["copula"].push_back(ch.acceptance);
  for (const auto& p : run.plugins) j["plugins"].push_back({{"alpha1", p.alpha1}, {"alpha2", p.alpha2}, {"gamma", p.gamma}});
  std::ofstream(join(dir, "oracle_report.json")) << j.dump(2) << '\n';

  std::printf("%-12s %12s %12s %10s %8s\n", "parameter", "mean", "sd", "n_eff", "Rhat");
  for (std::size_t i = 0; i < s.names.size(); ++i)
    std::printf("%-12s %12.5f %12.5f %10.0f %8.4f\n", s.names[i].c_str(), s.mean[i], s.sd[i], ess[i], rhat[i]);
  std::printf("oracle wall time: %.2f s\n", run.seconds);
  return 0;
}

int cmd_calibrate(const Common& c, const std::string& data_path) {
  require_file(data_path, "--data");
  const auto y = io::read_dataset(data_path);
  if (y.rows() < 100) throw ConfigError("calibrate-priors: need at least 100 rows of history, got " + std::to_string(y.rows()));
  const auto cfg = build_config(c, {{"D", std::to_string(y.cols())}});
  const std::string dir = ensure_dir(c.out_dir);
  const auto mcmc = cfg.mcmc_config();
  std::uint64_t calls = 0;
  priors::CalibrationHooks hooks;
  // oracle posterior means in transformed space, back-transformed
  hooks.estimate_marginal = [&](std::span<const double> series) {
    const auto ch = oracle::garch_posterior(series, cfg.prior, mcmc, Rng::derive(cfg.seed, calls++));
    const Eigen::VectorXd m = ch.mean();
    return garch::from_unconstrained(std::span<const double>(m.data(), m.size()), cfg.marginal_kind);
  };
  hooks.estimate_copula = [&](const Matrix& u) {
    const auto ch = oracle::copula_posterior(u, cfg.prior, cfg.family, mcmc, Rng::derive(cfg.seed, calls++));
    const Eigen::VectorXd m = ch.mean();
    return std::vector<double>(m.data(), m.data() + m.size() - (cfg.family == copula::Family::StudentT ? 1 : 0));
  };
  priors::PriorSpec fitted;
  try {
    fitted = priors::calibrate_priors(y, cfg.marginal_kind, cfg.k, hooks);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("calibrate-priors: ") + e.what());
  }
  const std::string path = join(dir, "priors.cfg");
  std::ofstream f(path);
  f << "# calibrated from " << data_path << "; usable as --config\n"
    << "D=" << cfg.D << "\nk=" << cfg.k << "\nfamily=" << copula::to_string(cfg.family) << '\n'
    << priors::describe(fitted);
  if (!f) throw IoError("write failed: " + path);
  std::printf("%swrote %s\n", priors::describe(fitted).c_str(), path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortised neural inference for copula models with GARCH(1,1) marginals"};
  app.set_help_flag("--help", "Print this help message and exit");  // frees -h: --h is the horizon
  app.require_subcommand(1);
  app.set_version_flag("--version", "nifm 1.0");

  const std::vector<std::string> model_keys{"marginal_kind", "family", "D", "k", "T", "seed", "threads"};
  const std::vector<std::string> train_keys{"preset",   "marginal_kind", "T",        "batch",
                                            "lr",       "max_epochs",    "patience", "n_per_epoch",
                                            "val_frac", "max_seconds",   "seed",     "threads"};
  const std::vector<std::string> mcmc_keys{"marginal_kind", "family", "k", "mcmc_iter", "mcmc_burn", "chains", "seed", "threads"};

  Common sim_c, tm_c, tc_c, inf_c, val_c, cmp_c, or_c, cal_c;
  bool dry_m = false, dry_c = false;
  std::string resume_m, resume_c, data, marginal, copula_ck, truth, label;
  std::vector<std::string> candidates;

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset and its ground-truth parameters from the prior");
  add_common(sim, sim_c);
  add_keys(sim, sim_c, model_keys);
  add_prior_keys(sim, sim_c);

  auto* tm = app.add_subcommand("train-marginal", "Train the marginal (GARCH) posterior network");
  add_common(tm, tm_c);
  // D, k and family are accepted so that one config file serves both stages
  auto shared_keys = train_keys;
  for (const char* k : {"family", "D", "k"}) shared_keys.emplace_back(k);
  add_keys(tm, tm_c, shared_keys);
  add_prior_keys(tm, tm_c);
  tm->add_flag("--dry-run", dry_m, "Validate the configuration and print the parameter count");
  tm->add_option("--resume", resume_m, "Continue from a checkpoint");

  auto* tc = app.add_subcommand("train-copula", "Train the copula posterior network");
  add_common(tc, tc_c);
  add_keys(tc, tc_c, shared_keys);
  add_prior_keys(tc, tc_c);
  tc->add_flag("--dry-run", dry_c, "Validate the configuration and print the parameter count");
  tc->add_option("--resume", resume_c, "Continue from a checkpoint");

  auto* inf = app.add_subcommand("infer", "Two-stage amortised inference on a dataset");
  add_common(inf, inf_c);
  add_keys(inf, inf_c, {"plugin", "seed"});
  inf->add_option("--data", data, "Dataset CSV (header y1..yD)")->required();
  inf->add_option("--marginal", marginal, "Marginal network checkpoint")->required();
  inf->add_option("--copula", copula_ck, "Copula network checkpoint (omit for the zero-factor model)");
  inf->add_option("--truth", truth, "Ground-truth file from simulate; adds truth and z columns");
  auto* samples = inf->add_option("--samples", inf_c.values["J"], "Write J joint posterior draws");
  inf_c.options.emplace_back("J", samples);

  auto* val = app.add_subcommand("validate", "Rolling-window log predictive density score");
  add_common(val, val_c);
  add_keys(val, val_c, {"J", "h", "K", "plugin", "seed"});
  val->add_option("--data", data, "Dataset CSV with at least T + h rows")->required();
  val->add_option("--marginal", marginal, "Marginal network checkpoint")->required();
  val->add_option("--copula", copula_ck, "Copula network checkpoint (omit for the zero-factor model)");
  val->add_option("--label", label, "Label for the report");

  auto* cmp = app.add_subcommand("compare", "Rank copula models by rolling-window LPDS");
  add_common(cmp, cmp_c);
  add_keys(cmp, cmp_c, {"J", "h", "K", "plugin", "seed"});
  cmp->add_option("--data", data, "Dataset CSV")->required();
  cmp->add_option("--marginal", marginal, "Marginal network checkpoint shared by all candidates")->required();
  cmp->add_option("--candidate", candidates, "label=copula_checkpoint, or label=none for zero factors")->required();

  auto* orc = app.add_subcommand("oracle", "Adaptive Metropolis reference posterior (two-step)");
  add_common(orc, or_c);
  add_keys(orc, or_c, mcmc_keys);
  add_prior_keys(orc, or_c);
  orc->add_option("--data", data, "Dataset CSV")->required();
  orc->add_option("--truth", truth, "Ground-truth file from simulate; adds truth and z columns");

  auto* cal = app.add_subcommand("calibrate-priors", "Fit prior hyperparameters to historical series");
  add_common(cal, cal_c);
  add_keys(cal, cal_c, mcmc_keys);
  cal->add_option("--data", data, "Historical series CSV (at least 100 rows, 3 series)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(sim_c);
    if (*tm) return cmd_train_marginal(tm_c, dry_m, resume_m);
    if (*tc) return cmd_train_copula(tc_c, dry_c, resume_c);
    if (*inf) return cmd_infer(inf_c, data, marginal, copula_ck, truth, samples->count() > 0);
    if (*val) return cmd_validate(val_c, data, marginal, copula_ck, label);
    if (*cmp) return cmd_compare(cmp_c, data, marginal, candidates);
    if (*orc) return cmd_oracle(or_c, data, truth);
    if (*cal) return cmd_calibrate(cal_c, data);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
