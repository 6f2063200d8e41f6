#pragma once

// Model assembly, margin-ranking loss, negative sampling and optimization.
//
// All trainable parameters are Euclidean. Manifold points are derived by
// lifting on every forward pass, so a plain Adam update keeps the model valid.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hgformer/attention.hpp"
#include "hgformer/autodiff.hpp"
#include "hgformer/geometry.hpp"
#include "hgformer/graph.hpp"
#include "hgformer/types.hpp"

namespace hgf::train {

using attention::PointMatrix;

struct ModelState {
  geometry::CurvatureSpace space{1.0, 64};
  Matrix user_emb;  // N x d
  Matrix item_emb;  // M x d
  std::vector<attention::HeadParams> heads;
  /// Normalization scale and shift coordinates, both 1 x d.
  Matrix gamma;
  Matrix beta;
  double norm_eps = 1e-5;
  double alpha = 0.25;
  std::size_t layers = 4;
  attention::AttentionConfig attn;

  std::size_t num_users() const noexcept { return static_cast<std::size_t>(user_emb.rows()); }
  std::size_t num_items() const noexcept { return static_cast<std::size_t>(item_emb.rows()); }
  attention::NormParams norm_params() const;

  /// Throws ArgumentError on inconsistent shapes or an alpha outside [0, 1].
  void validate() const;
};

struct InitConfig {
  double embedding_std = 0.1;
  double projection_noise = 0.01;
  /// Initial normalization scale. The global branch starts close to its shift
  /// point so that fusion is led by the local branch early in training.
  double gamma_init = 0.1;
};

ModelState init_model(const geometry::CurvatureSpace& space, std::size_t num_users, std::size_t num_items,
                      const attention::AttentionConfig& attn, double alpha, std::size_t layers, std::uint64_t seed,
                      const InitConfig& init = {});

struct LossConfig {
  double margin = 0.1;
  std::size_t negatives = 1;

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 1024;
  std::size_t epochs = 30;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Keep one feature map for all epochs instead of redrawing it.
  bool fixed_features = false;

  void validate() const;
};

/// Number of trainable blocks and their names, in checkpoint order.
std::vector<std::string> parameter_names(const ModelState& state);
/// Pointers into `state` in the same order as parameter_names.
std::vector<Matrix*> parameter_blocks(ModelState& state);
std::vector<const Matrix*> parameter_blocks(const ModelState& state);

// ---- forward ----------------------------------------------------------------------

/// Tape handles of every trainable block, in parameter_blocks order.
struct ParamVars {
  ad::Var user_emb;
  ad::Var item_emb;
  std::vector<attention::ProjectionVars> u2i;
  std::vector<attention::ProjectionVars> i2u;
  ad::Var gamma;
  ad::Var beta;

  std::vector<ad::Var> blocks() const;
};

ParamVars bind_parameters(ad::Tape& tape, const ModelState& state, bool trainable);

struct ForwardVars {
  ad::Var users;
  ad::Var items;
};

/// Lift, LHGCN local branch, attention global branch, fusion. `features` is
/// required in linear mode.
ForwardVars forward(const ModelState& state, const graph::BipartiteGraph& g, const ParamVars& params,
                    const attention::RandomFeatureMap* features, attention::OpCounter* counter = nullptr);

struct ForwardResult {
  PointMatrix users;
  PointMatrix items;
};

ForwardResult forward(const ModelState& state, const graph::BipartiteGraph& g,
                      const attention::RandomFeatureMap* features);

/// Global branch only (attention, head aggregation, normalization).
ForwardResult global_branch(const ModelState& state, const graph::BipartiteGraph& g,
                            const attention::RandomFeatureMap* features);

/// Feature map used for inference and for the fixed-feature training mode.
attention::RandomFeatureMap evaluation_features(const ModelState& state, std::uint64_t seed);

// ---- loss -------------------------------------------------------------------------

/// max(d(u, i_pos)^2 - d(u, i_neg)^2 + margin, 0)
double margin_loss(const geometry::CurvatureSpace& space, const geometry::LorentzPoint& u,
                   const geometry::LorentzPoint& pos, const geometry::LorentzPoint& neg, double margin);

/// Mean hinge over rows. All three are n x (d+1).
ad::Var margin_loss(double k, ad::Var users, ad::Var pos, ad::Var neg, double margin);

/// Rejection sampling of an item the user has not interacted with.
std::size_t sample_negative(const graph::BipartiteGraph& g, std::size_t user, std::mt19937_64& rng);

/// One training example per (edge, negative) pair.
struct Triples {
  std::vector<std::size_t> users;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;

  std::size_t size() const noexcept { return users.size(); }
};

Triples sample_triples(const graph::BipartiteGraph& g, std::span<const graph::Edge> edges, std::size_t negatives,
                       std::mt19937_64& rng);

/// Mean margin loss of the given triples under `state` (no gradients).
double evaluate_loss(const ModelState& state, const graph::BipartiteGraph& g, const Triples& triples,
                     const LossConfig& loss, const attention::RandomFeatureMap* features);

// ---- optimization -----------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  Adam(const ModelState& state, double beta1, double beta2, double eps);

  /// One step; gradients in parameter_blocks order.
  void step(ModelState& state, const std::vector<Matrix>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Loss of a fixed set of triples with a fixed feature map, computed after
/// every epoch. It changes only when the parameters do.
struct Probe {
  Triples triples;
  attention::RandomFeatureMap features;
};

Probe make_probe(const ModelState& state, const graph::BipartiteGraph& train, std::size_t negatives,
                 std::uint64_t seed);

struct EpochStats {
  std::size_t epoch = 0;
  /// Mean minibatch loss over the epoch (fresh negatives).
  double mean_loss = 0.0;
  double probe_loss = 0.0;
  std::size_t steps = 0;
};

class Trainer {
 public:
  Trainer(ModelState& state, const graph::BipartiteGraph& train, LossConfig loss, TrainConfig cfg);

  EpochStats run_epoch();
  const Probe& probe() const noexcept { return probe_; }

 private:
  ModelState& state_;
  const graph::BipartiteGraph& train_;
  LossConfig loss_;
  TrainConfig cfg_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::vector<graph::Edge> edges_;
  Probe probe_;
  std::size_t epoch_ = 0;
};

/// Loss value and gradients (parameter_blocks order) for one batch of triples.
std::pair<double, std::vector<Matrix>> loss_and_gradients(const ModelState& state, const graph::BipartiteGraph& g,
                                                          const Triples& batch, const LossConfig& loss,
                                                          const attention::RandomFeatureMap* features);

// ---- gradient verification ----------------------------------------------------------

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst_block;
  bool passed = false;
};

/// Central differences with step h on `samples` random coordinates of the
/// blocks, compared with `gradients` (same layout). The relative error of a
/// probe is |fd - g| / max(|fd|, |g|, floor).
GradientReport gradient_check(const std::vector<Matrix*>& blocks, const std::vector<std::string>& names,
                              const std::function<double()>& loss, const std::vector<Matrix>& gradients,
                              std::size_t samples, double tol, std::uint64_t seed, double step = 1e-5,
                              double floor = 1e-8);

GradientReport gradient_check(ModelState& state, const graph::BipartiteGraph& g, const Triples& batch,
                              const LossConfig& loss, const attention::RandomFeatureMap* features,
                              std::size_t samples, double tol, std::uint64_t seed);

// ---- checkpoint ----------------------------------------------------------------------

struct Checkpoint {
  ModelState state;
  double margin = 0.1;
};

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, double margin);
/// Restores shapes, K, alpha, L and parameters. Attention settings other than
/// the head count come from `attn`. Throws ParseError on a malformed file.
Checkpoint load_checkpoint(const std::filesystem::path& path, const attention::AttentionConfig& attn);

}  // namespace hgf::train
