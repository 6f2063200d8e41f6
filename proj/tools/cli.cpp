#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "hgformer/error.hpp"
#include "hgformer/eval.hpp"
#include "hgformer/parallel.hpp"
#include "hgformer/train.hpp"

namespace hgf::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  while (!key.empty() && key.front() == '-') key.erase(key.begin());
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ArgumentError("option '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  if (!text.empty() && text.front() == '-') throw ArgumentError("option '" + key + "' must be non-negative");
  return parse_number<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) {
  const double v = parse_number<double>(key, text);
  if (!std::isfinite(v)) throw ArgumentError("option '" + key + "' must be finite");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ArgumentError("option '" + key + "': expected a boolean, got '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ArgumentError("option '" + key + "': empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

struct OptionSpec {
  Setter set;
  bool is_flag = false;
  std::string help;
};

const std::map<std::string, OptionSpec>& option_table() {
  static const std::map<std::string, OptionSpec> table = [] {
    std::map<std::string, OptionSpec> t;
    auto size_opt = [](std::size_t RunConfig::*f) {
      return [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = parse_size(k, v); };
    };
    auto real_opt = [](double RunConfig::*f) {
      return [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = parse_real(k, v); };
    };
    auto bool_opt = [](bool RunConfig::*f) {
      return [f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = parse_bool(k, v); };
    };
    auto path_opt = [](std::filesystem::path RunConfig::*f) {
      return [f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; };
    };
    t["data"] = {path_opt(&RunConfig::data), false, "interaction file (user<TAB>item[...])"};
    t["out"] = {path_opt(&RunConfig::out), false, "output directory"};
    t["checkpoint"] = {path_opt(&RunConfig::checkpoint), false, "checkpoint path (default <out>/checkpoint.hgf)"};
    t["results"] = {path_opt(&RunConfig::results), false, "metrics CSV (default <out>/results.csv)"};
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
                 false, "random seed"};
    t["mode"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "exact") c.mode = attention::Mode::exact;
                   else if (v == "linear") c.mode = attention::Mode::linear;
                   else throw ArgumentError("option '" + k + "' must be exact or linear");
                 },
                 false, "attention path: exact|linear"};
    t["similarity"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                         if (v == "hsm") c.similarity = attention::Similarity::hsm;
                         else if (v == "distance") c.similarity = attention::Similarity::distance;
                         else throw ArgumentError("option '" + k + "' must be hsm or distance");
                       },
                       false, "exact-path similarity: hsm|distance"};
    t["k10"] = {bool_opt(&RunConfig::k10), true, "report k=10"};
    t["k20"] = {bool_opt(&RunConfig::k20), true, "report k=20"};
    t["workers"] = {size_opt(&RunConfig::workers), false, "worker threads (default HGF_THREADS or 1)"};
    t["epochs"] = {size_opt(&RunConfig::epochs), false, "training epochs"};
    t["lr"] = {real_opt(&RunConfig::lr), false, "learning rate"};
    t["alpha"] = {real_opt(&RunConfig::alpha), false, "fusion weight of the global branch"};
    t["margin"] = {real_opt(&RunConfig::margin), false, "margin of the ranking loss"};
    t["curvature"] = {real_opt(&RunConfig::curvature), false, "K (curvature -1/K)"};
    t["layers"] = {size_opt(&RunConfig::layers), false, "LHGCN layers"};
    t["heads"] = {size_opt(&RunConfig::heads), false, "attention heads"};
    t["rf-dim"] = {size_opt(&RunConfig::rf_dim), false, "random features m"};
    t["temp"] = {real_opt(&RunConfig::temp), false, "attention temperature"};
    t["dim"] = {size_opt(&RunConfig::dim), false, "embedding dimension d"};
    t["batch-size"] = {size_opt(&RunConfig::batch_size), false, "positive edges per step"};
    t["negatives"] = {size_opt(&RunConfig::negatives), false, "negatives per positive"};
    t["test-fraction"] = {real_opt(&RunConfig::test_fraction), false, "per-user holdout fraction"};
    t["tail-quantile"] = {real_opt(&RunConfig::tail_quantile), false, "fraction of items counted as tail"};
    t["run-id"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                     if (v.empty() || v.find_first_of(",\n") != std::string::npos) {
                       throw ArgumentError("option '" + k + "' must be non-empty without commas");
                     }
                     c.run_id = v;
                   },
                   false, "identifier written to the metrics CSV"};
    t["fixed-features"] = {bool_opt(&RunConfig::fixed_features), true, "keep one feature map for all epochs"};
    t["tie-directions"] = {bool_opt(&RunConfig::tie_directions), true, "share projections between directions"};
    t["sim-scale"] = {real_opt(&RunConfig::sim_scale), false, "c1 of the distance similarity"};
    t["sim-offset"] = {real_opt(&RunConfig::sim_offset), false, "c2 of the distance similarity"};
    t["init-std"] = {real_opt(&RunConfig::init_std), false, "std of the initial embeddings"};
    t["sizes"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.sizes = parse_list(k, v); }, false,
                  "bench: comma-separated N=M sizes"};
    t["rf-dims"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.rf_dims = parse_list(k, v); },
                    false, "bench: comma-separated feature counts"};
    t["exact-cap"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                        c.exact_cap = parse_number<std::uint64_t>(k, v);
                      },
                      false, "bench: skip the exact path above this N*M"};
    t["bench-seeds"] = {size_opt(&RunConfig::bench_seeds), false, "bench: feature seeds for the error median"};
    t["bench-repeats"] = {size_opt(&RunConfig::bench_repeats), false, "bench: timing repeats (minimum is kept)"};
    t["error-queries"] = {size_opt(&RunConfig::error_queries), false, "bench: queries used for the weight error"};
    t["synth-users"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.synth.num_users = parse_size(k, v); },
                        false, "synth: users"};
    t["synth-items"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.synth.num_items = parse_size(k, v); },
                        false, "synth: items"};
    t["inject-fault"] = {bool_opt(&RunConfig::inject_fault), true, "selftest: perturb the exponential map"};
    return t;
  }();
  return table;
}

std::size_t default_workers() {
  if (const char* env = std::getenv("HGF_THREADS")) {
    try {
      const std::size_t n = parse_size("HGF_THREADS", env);
      if (n > 0) return n;
    } catch (const ArgumentError&) {
    }
  }
  return 1;
}

std::filesystem::path checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out / "checkpoint.hgf" : cfg.checkpoint;
}

std::filesystem::path results_path(const RunConfig& cfg) {
  return cfg.results.empty() ? cfg.out / "results.csv" : cfg.results;
}

attention::AttentionConfig attention_config(const RunConfig& cfg) {
  attention::AttentionConfig a;
  a.heads = cfg.heads;
  a.temperature = cfg.temp;
  a.similarity = cfg.similarity;
  a.sim_scale = cfg.sim_scale;
  a.sim_offset = cfg.sim_offset;
  a.mode = cfg.mode;
  a.feature_dim = cfg.rf_dim;
  a.tie_directions = cfg.tie_directions;
  return a;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::uint64_t init_seed(const RunConfig& c) { return c.seed; }
std::uint64_t split_seed(const RunConfig& c) { return c.seed + 1; }
std::uint64_t train_seed(const RunConfig& c) { return c.seed + 2; }
std::uint64_t eval_feature_seed(const RunConfig& c) { return c.seed + 3; }

void set_option(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = normalize_key(key);
  const auto& t = option_table();
  const auto it = t.find(k);
  if (it == t.end()) throw ArgumentError("unknown option '" + key + "'");
  it->second.set(cfg, k, trim(value));
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError(no, "expected key=value in " + path.string());
    const std::string key = trim(s.substr(0, eq));
    if (normalize_key(key) == "config") throw ParseError(no, "config files cannot include other config files");
    try {
      set_option(cfg, key, s.substr(eq + 1));
    } catch (const ArgumentError& e) {
      throw ParseError(no, std::string(e.what()) + " in " + path.string());
    }
  }
}

void validate(const RunConfig& cfg) {
  if (cfg.workers < 1) throw ArgumentError("--workers must be >= 1");
  if (cfg.dim < 1) throw ArgumentError("--dim must be >= 1");
  geometry::CurvatureSpace(cfg.curvature, cfg.dim);
  attention_config(cfg).validate();
  train::LossConfig{cfg.margin, cfg.negatives}.validate();
  train::TrainConfig tc;
  tc.learning_rate = cfg.lr;
  tc.batch_size = cfg.batch_size;
  tc.validate();
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ArgumentError("--alpha must lie in [0, 1]");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) throw ArgumentError("--test-fraction must lie in (0, 1)");
  if (!(cfg.tail_quantile >= 0.0 && cfg.tail_quantile <= 1.0)) throw ArgumentError("--tail-quantile must lie in [0, 1]");
  if (!(cfg.init_std > 0.0)) throw ArgumentError("--init-std must be > 0");
  for (std::size_t n : cfg.sizes) {
    if (n < 1) throw ArgumentError("--sizes entries must be >= 1");
  }
  for (std::size_t m : cfg.rf_dims) {
    if (m < 1) throw ArgumentError("--rf-dims entries must be >= 1");
  }
  if (cfg.bench_seeds < 1 || cfg.bench_repeats < 1 || cfg.error_queries < 1) {
    throw ArgumentError("bench seeds, repeats and error queries must be >= 1");
  }
}

// ---- train ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.data.empty()) {
    err << "train: --data is required\n";
    return kExitConfig;
  }
  graph::Interactions data;
  graph::SplitDataset split;
  try {
    validate(cfg);
    data = graph::load_interactions(cfg.data);
    split = graph::split_train_test(data.graph, cfg.test_fraction, split_seed(cfg));
    std::filesystem::create_directories(cfg.out);
    graph::save_id_mapping(data.ids, cfg.out);
  } catch (const Error& e) {
    err << "train: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "train: " << e.what() << '\n';
    return kExitConfig;
  }
  set_worker_count(cfg.workers);

  const geometry::CurvatureSpace space(cfg.curvature, cfg.dim);
  train::InitConfig init;
  init.embedding_std = cfg.init_std;
  train::ModelState state = train::init_model(space, split.train.num_users(), split.train.num_items(),
                                              attention_config(cfg), cfg.alpha, cfg.layers, init_seed(cfg), init);
  train::TrainConfig tc;
  tc.learning_rate = cfg.lr;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.seed = train_seed(cfg);
  tc.fixed_features = cfg.fixed_features;
  const train::LossConfig lc{cfg.margin, cfg.negatives};

  std::ofstream log(cfg.out / "loss.log", std::ios::trunc);
  if (!log) {
    err << "train: cannot write " << (cfg.out / "loss.log").string() << '\n';
    return kExitConfig;
  }
  try {
    train::Trainer trainer(state, split.train, lc, tc);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      const train::EpochStats s = trainer.run_epoch();
      const std::string line = "epoch=" + std::to_string(s.epoch) + " loss=" + fmt(s.mean_loss) +
                               " probe_loss=" + fmt(s.probe_loss) + " steps=" + std::to_string(s.steps);
      log << line << '\n';
      out << line << '\n';
    }
    train::save_checkpoint(checkpoint_path(cfg), state, cfg.margin);
  } catch (const NumericError& e) {
    err << "train: aborted: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const SamplingExhaustedError& e) {
    err << "train: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "train: " << e.what() << '\n';
    return kExitConfig;
  }
  out << "checkpoint=" << checkpoint_path(cfg).string() << '\n';
  return kExitOk;
}

// ---- evaluate --------------------------------------------------------------------------

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.data.empty()) {
    err << "evaluate: --data is required\n";
    return kExitConfig;
  }
  graph::SplitDataset split;
  train::Checkpoint ck;
  try {
    validate(cfg);
    const graph::Interactions data = graph::load_interactions(cfg.data);
    split = graph::split_train_test(data.graph, cfg.test_fraction, split_seed(cfg));
    ck = train::load_checkpoint(checkpoint_path(cfg), attention_config(cfg));
  } catch (const Error& e) {
    err << "evaluate: " << e.what() << '\n';
    return kExitConfig;
  }
  if (ck.state.num_users() != split.train.num_users() || ck.state.num_items() != split.train.num_items()) {
    err << "evaluate: checkpoint has " << ck.state.num_users() << " users x " << ck.state.num_items()
        << " items but the data has " << split.train.num_users() << " x " << split.train.num_items() << '\n';
    return kExitConfig;
  }
  set_worker_count(cfg.workers);
  std::vector<std::size_t> ks;
  if (cfg.k10 || !cfg.k20) ks.push_back(10);
  if (cfg.k20 || !cfg.k10) ks.push_back(20);
  try {
    const auto features = train::evaluation_features(ck.state, eval_feature_seed(cfg));
    const auto fw = train::forward(ck.state, split.train, &features);
    const auto report = eval::evaluate(ck.state.space, fw.users, fw.items, split, ks, cfg.tail_quantile, cfg.run_id);
    out << report.to_json() << '\n';
    std::filesystem::create_directories(results_path(cfg).parent_path().empty() ? "." : results_path(cfg).parent_path());
    eval::append_csv(results_path(cfg), report);
  } catch (const NumericError& e) {
    err << "evaluate: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "evaluate: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}

// ---- bench / selftest / synth ------------------------------------------------------------

int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::vector<BenchRow> rows;
  try {
    validate(cfg);
    set_worker_count(cfg.workers);
    rows = run_bench(cfg);
  } catch (const Error& e) {
    err << "bench: " << e.what() << '\n';
    return kExitConfig;
  }
  std::ostringstream csv;
  csv << "N,M,d,m,exact_ms,linear_ms,mean_weight_abs_err,exact_madds,linear_madds\n";
  for (const auto& r : rows) {
    csv << r.n << ',' << r.m << ',' << r.d << ',' << r.features << ',';
    if (r.exact_ms >= 0.0) csv << fmt(r.exact_ms);
    else csv << "skipped";
    csv << ',' << fmt(r.linear_ms) << ',' << fmt(r.mean_weight_abs_err) << ',';
    if (r.exact_ms >= 0.0) csv << r.exact_madds;
    csv << ',' << r.linear_madds << '\n';
  }
  out << csv.str();
  std::error_code ec;
  std::filesystem::create_directories(cfg.out, ec);
  std::ofstream f(cfg.out / "bench.csv", std::ios::trunc);
  if (f) f << csv.str();
  return kExitOk;
}

int cmd_selftest(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto checks = run_selftest(cfg.inject_fault, out);
  std::size_t failed = 0;
  for (const auto& c : checks) failed += c.passed ? 0 : 1;
  const auto first = std::find_if(checks.begin(), checks.end(), [](const SelftestCheck& c) { return !c.passed; });
  out << "selftest: " << (checks.size() - failed) << "/" << checks.size() << " passed\n";
  if (first != checks.end()) {
    err << "selftest: first failing property: " << first->name << " (" << first->detail << ")\n";
    return kExitSelftest;
  }
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    graph::SyntheticConfig sc = cfg.synth;
    sc.seed = cfg.seed;
    const auto syn = graph::make_synthetic_hierarchical(sc);
    std::filesystem::create_directories(cfg.out);
    const auto path = cfg.out / "interactions.tsv";
    graph::save_interactions(syn.graph, path);
    out << "wrote " << syn.graph.num_edges() << " interactions to " << path.string() << '\n';
  } catch (const Error& e) {
    err << "synth: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "synth: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}

// ---- entry point ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyperbolic graph transformer for collaborative filtering"};
  app.require_subcommand(1);
  struct Bound {
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> options;
    CLI::Option* config_opt = nullptr;
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train a model and write a checkpoint"},
      {"evaluate", "rank items with a checkpoint and report metrics"},
      {"bench", "time and count the exact and linear attention paths"},
      {"selftest", "run the built-in property checks"},
      {"synth", "write a synthetic hierarchical interaction file"}};
  std::map<std::string, Bound> bound;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    Bound& b = bound[name];
    b.config_opt = sub->add_option("--config", b.config, "key=value configuration file");
    for (const auto& [key, spec] : option_table()) {
      if (spec.is_flag) {
        b.options[key] = sub->add_flag("--" + key, b.flags[key], spec.help);
      } else {
        b.options[key] = sub->add_option("--" + key, b.values[key], spec.help);
      }
    }
    subs[name] = sub;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  for (const auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    const Bound& b = bound.at(name);
    RunConfig cfg;
    cfg.workers = default_workers();
    try {
      if (b.config_opt->count() > 0) apply_config_file(cfg, b.config);
      for (const auto& [key, opt] : b.options) {
        if (opt->count() == 0) continue;
        if (option_table().at(key).is_flag) set_option(cfg, key, b.flags.at(key) ? "true" : "false");
        else set_option(cfg, key, b.values.at(key));
      }
      validate(cfg);
    } catch (const Error& e) {
      err << name << ": configuration error: " << e.what() << '\n';
      return kExitConfig;
    }
    if (name == "train") return cmd_train(cfg, out, err);
    if (name == "evaluate") return cmd_evaluate(cfg, out, err);
    if (name == "bench") return cmd_bench(cfg, out, err);
    if (name == "selftest") return cmd_selftest(cfg, out, err);
    return cmd_synth(cfg, out, err);
  }
  return kExitConfig;
}

}  // namespace hgf::cli
