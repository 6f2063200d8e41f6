#pragma once

// hgformer command-line interface: train, evaluate, bench, selftest, synth.
//
// Exit codes: 0 success, 1 selftest failure, 2 configuration / data /
// dimension error, 3 non-finite values during training.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hgformer/attention.hpp"
#include "hgformer/graph.hpp"

namespace hgf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitSelftest = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path out = "hgformer_out";
  std::filesystem::path checkpoint;  // default: <out>/checkpoint.hgf
  std::filesystem::path results;     // default: <out>/results.csv
  std::uint64_t seed = 42;
  attention::Mode mode = attention::Mode::linear;
  bool k10 = false;
  bool k20 = false;
  std::size_t workers = 1;
  std::size_t epochs = 30;
  double lr = 1e-2;
  double alpha = 0.25;
  double margin = 0.1;
  double curvature = 1.0;
  std::size_t layers = 4;
  std::size_t heads = 1;
  std::size_t rf_dim = 64;
  double temp = 1.0;
  std::size_t dim = 64;
  std::size_t batch_size = 1024;
  std::size_t negatives = 1;
  double test_fraction = 0.2;
  double tail_quantile = 0.8;
  std::string run_id = "run";
  bool fixed_features = false;
  bool tie_directions = false;
  attention::Similarity similarity = attention::Similarity::hsm;
  double sim_scale = 1.0;
  double sim_offset = 0.0;
  double init_std = 0.1;

  // bench
  std::vector<std::size_t> sizes = {2048, 4096, 8192};
  std::vector<std::size_t> rf_dims = {64, 256, 1024};
  std::uint64_t exact_cap = 4096ULL * 4096ULL;
  std::size_t bench_seeds = 5;
  std::size_t bench_repeats = 3;
  std::size_t error_queries = 64;

  // synth
  graph::SyntheticConfig synth;

  // selftest
  bool inject_fault = false;
};

/// Seeds of the independent random streams derived from --seed.
std::uint64_t init_seed(const RunConfig& cfg);
std::uint64_t split_seed(const RunConfig& cfg);
std::uint64_t train_seed(const RunConfig& cfg);
std::uint64_t eval_feature_seed(const RunConfig& cfg);

/// Sets one key (flag name without dashes, '_' and '-' interchangeable).
/// Throws ArgumentError for unknown keys or malformed values.
void set_option(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat key=value file; `#` starts a comment line. Throws ParseError.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Throws ArgumentError describing the first invalid setting.
void validate(const RunConfig& cfg);

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_selftest(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Full command-line entry point.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct BenchRow {
  std::size_t n = 0, m = 0, d = 0, features = 0;
  double exact_ms = -1.0;  // negative when skipped
  double linear_ms = 0.0;
  double mean_weight_abs_err = 0.0;
  std::uint64_t exact_madds = 0;
  std::uint64_t linear_madds = 0;
};

std::vector<BenchRow> run_bench(const RunConfig& cfg);

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// All selftest properties in execution order. With inject_fault the
/// exponential map used by the geometry checks is perturbed by 1e-3.
std::vector<SelftestCheck> run_selftest(bool inject_fault, std::ostream& log);

}  // namespace hgf::cli
