#include "hgformer/train.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "hgformer/error.hpp"
#include "hgformer/fpmode.hpp"

namespace hgf::train {

using attention::Mode;
using attention::RandomFeatureMap;

namespace {

constexpr std::array<const char*, 6> kHeadBlockNames = {"W_Q", "W_K", "W_V", "W_Q'", "W_K'", "W_V'"};

std::array<Matrix*, 6> head_blocks(attention::HeadParams& h) {
  return {&h.user_to_item.query, &h.user_to_item.key, &h.user_to_item.value,
          &h.item_to_user.query, &h.item_to_user.key, &h.item_to_user.value};
}

void check_shape(const Matrix& m, Index rows, Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ArgumentError("model: block " + name + " has shape " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!m.allFinite()) throw ArgumentError("model: block " + name + " has non-finite entries");
}

}  // namespace

attention::NormParams ModelState::norm_params() const {
  return {Vector(gamma.data(), gamma.data() + gamma.size()), Vector(beta.data(), beta.data() + beta.size()), norm_eps};
}

void ModelState::validate() const {
  attn.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("model: alpha must lie in [0, 1]");
  if (heads.size() != attn.heads) throw ArgumentError("model: head parameter count differs from attention heads");
  const auto d = static_cast<Index>(space.dim());
  const auto names = parameter_names(*this);
  const auto blocks = parameter_blocks(*this);
  check_shape(*blocks[0], user_emb.rows(), d, names[0]);
  check_shape(*blocks[1], item_emb.rows(), d, names[1]);
  for (std::size_t b = 2; b + 2 < blocks.size(); ++b) check_shape(*blocks[b], d, d, names[b]);
  check_shape(gamma, 1, d, "gamma");
  check_shape(beta, 1, d, "beta_param");
  if (!(norm_eps > 0.0)) throw ArgumentError("model: normalization eps must be > 0");
}

ModelState init_model(const geometry::CurvatureSpace& space, std::size_t num_users, std::size_t num_items,
                      const attention::AttentionConfig& attn, double alpha, std::size_t layers, std::uint64_t seed,
                      const InitConfig& init) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init.embedding_std);
  const auto d = static_cast<Index>(space.dim());
  ModelState s;
  s.space = space;
  s.user_emb.resize(static_cast<Index>(num_users), d);
  s.item_emb.resize(static_cast<Index>(num_items), d);
  for (Index i = 0; i < s.user_emb.size(); ++i) s.user_emb.data()[i] = normal(rng);
  for (Index i = 0; i < s.item_emb.size(); ++i) s.item_emb.data()[i] = normal(rng);
  for (std::size_t h = 0; h < attn.heads; ++h) {
    s.heads.push_back(attention::HeadParams::random(space.dim(), init.projection_noise, rng));
    if (attn.tie_directions) s.heads.back().item_to_user = s.heads.back().user_to_item;
  }
  s.gamma = Matrix::Constant(1, d, init.gamma_init);
  s.beta = Matrix::Zero(1, d);
  s.alpha = alpha;
  s.layers = layers;
  s.attn = attn;
  s.validate();
  return s;
}

void LossConfig::validate() const {
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw ArgumentError("loss: margin must be a finite value >= 0");
  if (negatives < 1) throw ArgumentError("loss: negatives per positive must be >= 1");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("train: learning rate must be >= 0");
  if (batch_size < 1) throw ArgumentError("train: batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("train: moment coefficients must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ArgumentError("train: adam eps must be > 0");
}

std::vector<std::string> parameter_names(const ModelState& state) {
  std::vector<std::string> names = {"user_emb", "item_emb"};
  for (std::size_t h = 0; h < state.heads.size(); ++h) {
    for (const char* n : kHeadBlockNames) names.push_back("head" + std::to_string(h) + "." + n);
  }
  names.emplace_back("gamma");
  names.emplace_back("beta_param");
  return names;
}

std::vector<Matrix*> parameter_blocks(ModelState& state) {
  std::vector<Matrix*> out = {&state.user_emb, &state.item_emb};
  for (auto& h : state.heads) {
    for (Matrix* m : head_blocks(h)) out.push_back(m);
  }
  out.push_back(&state.gamma);
  out.push_back(&state.beta);
  return out;
}

std::vector<const Matrix*> parameter_blocks(const ModelState& state) {
  auto blocks = parameter_blocks(const_cast<ModelState&>(state));
  return {blocks.begin(), blocks.end()};
}

// ---- forward ------------------------------------------------------------------------------

std::vector<ad::Var> ParamVars::blocks() const {
  std::vector<ad::Var> out = {user_emb, item_emb};
  for (std::size_t h = 0; h < u2i.size(); ++h) {
    for (const ad::Var& v : {u2i[h].query, u2i[h].key, u2i[h].value, i2u[h].query, i2u[h].key, i2u[h].value}) {
      out.push_back(v);
    }
  }
  out.push_back(gamma);
  out.push_back(beta);
  return out;
}

ParamVars bind_parameters(ad::Tape& tape, const ModelState& state, bool trainable) {
  auto bind = [&](const Matrix& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  ParamVars p;
  p.user_emb = bind(state.user_emb);
  p.item_emb = bind(state.item_emb);
  for (const auto& h : state.heads) {
    p.u2i.push_back({bind(h.user_to_item.query), bind(h.user_to_item.key), bind(h.user_to_item.value)});
    p.i2u.push_back({bind(h.item_to_user.query), bind(h.item_to_user.key), bind(h.item_to_user.value)});
  }
  p.gamma = bind(state.gamma);
  p.beta = bind(state.beta);
  return p;
}

namespace {

ForwardVars global_vars(const ModelState& state, const ParamVars& params, ad::Var u0, ad::Var i0,
                        const RandomFeatureMap* features, attention::OpCounter* counter) {
  const auto& space = state.space;
  const auto& cfg = state.attn;
  // tied directions reuse the user->item handles so both uses share one gradient
  const auto& i2u = cfg.tie_directions ? params.u2i : params.i2u;
  std::vector<ad::Var> uh, ih;
  if (cfg.mode == Mode::exact) {
    uh = attention::exact_cross_attention(space, cfg, params.u2i, u0, i0, counter);
    ih = attention::exact_cross_attention(space, cfg, i2u, i0, u0, counter);
  } else {
    if (features == nullptr) throw ArgumentError("forward: linear attention needs a random feature map");
    uh = attention::linear_cross_attention(space, cfg, params.u2i, *features, u0, i0, counter);
    ih = attention::linear_cross_attention(space, cfg, i2u, *features, i0, u0, counter);
  }
  ad::Var ug = attention::aggregate_heads(space, uh);
  ad::Var ig = attention::aggregate_heads(space, ih);
  ad::Var joint = attention::hyperbolic_normalize(space, ad::concat_rows(ug, ig), params.gamma, params.beta,
                                                  state.norm_eps);
  return {ad::row_slice(joint, 0, ug.rows()), ad::row_slice(joint, ug.rows(), ig.rows())};
}

void check_graph(const ModelState& state, const graph::BipartiteGraph& g) {
  if (g.num_users() != state.num_users() || g.num_items() != state.num_items()) {
    throw ArgumentError("forward: model has " + std::to_string(state.num_users()) + " users / " +
                        std::to_string(state.num_items()) + " items but the graph has " +
                        std::to_string(g.num_users()) + " / " + std::to_string(g.num_items()));
  }
}

}  // namespace

ForwardVars forward(const ModelState& state, const graph::BipartiteGraph& g, const ParamVars& params,
                    const RandomFeatureMap* features, attention::OpCounter* counter) {
  check_graph(state, g);
  const double k = state.space.k();
  ad::Var u0 = ad::lift_rows(k, params.user_emb);
  ad::Var i0 = ad::lift_rows(k, params.item_emb);
  auto [ul, il] = graph::lhgcn_forward(state.space, g, u0, i0, state.layers);
  if (state.alpha == 0.0) return {ul, il};
  ForwardVars glob = global_vars(state, params, u0, i0, features, counter);
  if (state.alpha == 1.0) return glob;
  auto fuse = [&](ad::Var gl, ad::Var lo) {
    return ad::lift_rows(k, ad::add(ad::scale(ad::unlift_rows(k, gl), state.alpha),
                                    ad::scale(ad::unlift_rows(k, lo), 1.0 - state.alpha)));
  };
  return {fuse(glob.users, ul), fuse(glob.items, il)};
}

ForwardResult forward(const ModelState& state, const graph::BipartiteGraph& g, const RandomFeatureMap* features) {
  const FlushDenormals ftz;
  ad::Tape tape(false);
  const ParamVars p = bind_parameters(tape, state, false);
  const ForwardVars out = forward(state, g, p, features);
  return {out.users.value(), out.items.value()};
}

ForwardResult global_branch(const ModelState& state, const graph::BipartiteGraph& g,
                            const RandomFeatureMap* features) {
  check_graph(state, g);
  const FlushDenormals ftz;
  ad::Tape tape(false);
  const ParamVars p = bind_parameters(tape, state, false);
  const double k = state.space.k();
  const ForwardVars out =
      global_vars(state, p, ad::lift_rows(k, p.user_emb), ad::lift_rows(k, p.item_emb), features, nullptr);
  return {out.users.value(), out.items.value()};
}

RandomFeatureMap evaluation_features(const ModelState& state, std::uint64_t seed) {
  return RandomFeatureMap::sample(state.attn.feature_dim, state.space.dim(), seed);
}

// ---- loss -----------------------------------------------------------------------------------

double margin_loss(const geometry::CurvatureSpace& space, const geometry::LorentzPoint& u,
                   const geometry::LorentzPoint& pos, const geometry::LorentzPoint& neg, double margin) {
  const double dp = geometry::distance(space, u, pos);
  const double dn = geometry::distance(space, u, neg);
  return std::max(dp * dp - dn * dn + margin, 0.0);
}

ad::Var margin_loss(double k, ad::Var users, ad::Var pos, ad::Var neg, double margin) {
  ad::Var dp = ad::square(ad::distance_rows(k, users, pos));
  ad::Var dn = ad::square(ad::distance_rows(k, users, neg));
  return ad::mean(ad::relu(ad::add_scalar(ad::sub(dp, dn), margin)));
}

std::size_t sample_negative(const graph::BipartiteGraph& g, std::size_t user, std::mt19937_64& rng) {
  if (user >= g.num_users()) throw ArgumentError("sample_negative: user index out of range");
  if (g.user_degree(user) >= g.num_items()) {
    throw SamplingExhaustedError("sample_negative: user " + std::to_string(user) + " interacted with every item");
  }
  std::uniform_int_distribution<std::size_t> pick(0, g.num_items() - 1);
  for (;;) {
    const std::size_t item = pick(rng);
    if (!g.has_edge(user, item)) return item;
  }
}

Triples sample_triples(const graph::BipartiteGraph& g, std::span<const graph::Edge> edges, std::size_t negatives,
                       std::mt19937_64& rng) {
  Triples t;
  t.users.reserve(edges.size() * negatives);
  t.positives.reserve(edges.size() * negatives);
  t.negatives.reserve(edges.size() * negatives);
  for (const auto& [u, i] : edges) {
    for (std::size_t n = 0; n < negatives; ++n) {
      t.users.push_back(u);
      t.positives.push_back(i);
      t.negatives.push_back(sample_negative(g, u, rng));
    }
  }
  return t;
}

namespace {

ad::Var batch_loss(const ModelState& state, const graph::BipartiteGraph& g, const ParamVars& params,
                   const Triples& batch, const LossConfig& loss, const RandomFeatureMap* features) {
  if (batch.size() == 0) throw ArgumentError("loss: empty batch");
  const ForwardVars out = forward(state, g, params, features);
  return margin_loss(state.space.k(), ad::gather_rows(out.users, batch.users),
                     ad::gather_rows(out.items, batch.positives), ad::gather_rows(out.items, batch.negatives),
                     loss.margin);
}

}  // namespace

double evaluate_loss(const ModelState& state, const graph::BipartiteGraph& g, const Triples& triples,
                     const LossConfig& loss, const RandomFeatureMap* features) {
  const FlushDenormals ftz;
  ad::Tape tape(false);
  const ParamVars p = bind_parameters(tape, state, false);
  return batch_loss(state, g, p, triples, loss, features).value()(0, 0);
}

std::pair<double, std::vector<Matrix>> loss_and_gradients(const ModelState& state, const graph::BipartiteGraph& g,
                                                          const Triples& batch, const LossConfig& loss,
                                                          const RandomFeatureMap* features) {
  const FlushDenormals ftz;
  ad::Tape tape(true);
  const ParamVars p = bind_parameters(tape, state, true);
  ad::Var l = batch_loss(state, g, p, batch, loss, features);
  tape.backward(l);
  std::vector<Matrix> grads;
  for (const ad::Var& v : p.blocks()) grads.push_back(v.grad());
  if (state.attn.tie_directions) {
    // the primed blocks are copies of the unprimed ones and receive no update of their own
    for (std::size_t h = 0; h < state.heads.size(); ++h) {
      for (std::size_t j = 3; j < 6; ++j) grads[2 + 6 * h + j].setZero();
    }
  }
  return {l.value()(0, 0), std::move(grads)};
}

// ---- optimization -----------------------------------------------------------------------------

Adam::Adam(const ModelState& state, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Matrix* b : parameter_blocks(state)) {
    m_.push_back(Matrix::Zero(b->rows(), b->cols()));
    v_.push_back(Matrix::Zero(b->rows(), b->cols()));
  }
}

void Adam::step(ModelState& state, const std::vector<Matrix>& grads, double lr) {
  auto blocks = parameter_blocks(state);
  if (grads.size() != blocks.size() || m_.size() != blocks.size()) throw DimensionError("adam: block count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Matrix& g = grads[b];
    m_[b] = beta1_ * m_[b] + (1.0 - beta1_) * g;
    v_[b] = beta2_ * v_[b] + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix& p = *blocks[b];
    for (Index i = 0; i < p.size(); ++i) {
      const double mhat = m_[b].data()[i] / c1;
      const double vhat = v_[b].data()[i] / c2;
      p.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Probe make_probe(const ModelState& state, const graph::BipartiteGraph& train, std::size_t negatives,
                 std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto edges = train.edges();
  Probe p;
  p.triples = sample_triples(train, edges, negatives, rng);
  p.features = evaluation_features(state, rng());
  return p;
}

Trainer::Trainer(ModelState& state, const graph::BipartiteGraph& train, LossConfig loss, TrainConfig cfg)
    : state_(state), train_(train), loss_(loss), cfg_(cfg), rng_(cfg.seed), edges_(train.edges()) {
  state_.validate();
  loss_.validate();
  cfg_.validate();
  if (edges_.empty()) throw ArgumentError("train: the training graph has no edges");
  if (train.num_users() != state.num_users() || train.num_items() != state.num_items()) {
    throw ArgumentError("train: model and graph sizes differ");
  }
  adam_ = Adam(state_, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
  probe_ = make_probe(state_, train_, loss_.negatives, cfg_.seed);
}

EpochStats Trainer::run_epoch() {
  EpochStats stats;
  stats.epoch = ++epoch_;
  const bool linear = state_.attn.mode == Mode::linear;
  RandomFeatureMap fresh;
  if (linear && !cfg_.fixed_features) fresh = evaluation_features(state_, rng_());
  const RandomFeatureMap* features = linear ? (cfg_.fixed_features ? &probe_.features : &fresh) : nullptr;

  std::shuffle(edges_.begin(), edges_.end(), rng_);
  const auto names = parameter_names(state_);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < edges_.size(); begin += cfg_.batch_size) {
    const std::size_t n = std::min(cfg_.batch_size, edges_.size() - begin);
    const Triples batch =
        sample_triples(train_, std::span(edges_).subspan(begin, n), loss_.negatives, rng_);
    auto [loss, grads] = loss_and_gradients(state_, train_, batch, loss_, features);
    if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch_));
    for (std::size_t b = 0; b < grads.size(); ++b) {
      if (!grads[b].allFinite()) {
        throw NumericError("train: non-finite gradient in parameter block " + names[b] + " at epoch " +
                           std::to_string(epoch_));
      }
    }
    adam_.step(state_, grads, cfg_.learning_rate);
    if (state_.attn.tie_directions) {
      for (auto& h : state_.heads) h.item_to_user = h.user_to_item;
    }
    for (std::size_t b = 0; b < grads.size(); ++b) {
      if (!parameter_blocks(state_)[b]->allFinite()) {
        throw NumericError("train: parameter block " + names[b] + " became non-finite");
      }
    }
    total += loss * static_cast<double>(batch.size());
    count += batch.size();
    ++stats.steps;
  }
  stats.mean_loss = total / static_cast<double>(count);
  stats.probe_loss = evaluate_loss(state_, train_, probe_.triples, loss_, linear ? &probe_.features : nullptr);
  return stats;
}

// ---- gradient verification ----------------------------------------------------------------------

GradientReport gradient_check(const std::vector<Matrix*>& blocks, const std::vector<std::string>& names,
                              const std::function<double()>& loss, const std::vector<Matrix>& gradients,
                              std::size_t samples, double tol, std::uint64_t seed, double step, double floor) {
  if (blocks.size() != gradients.size() || blocks.size() != names.size()) {
    throw DimensionError("gradient_check: blocks, names and gradients differ in count");
  }
  std::vector<std::size_t> offsets{0};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b]->rows() != gradients[b].rows() || blocks[b]->cols() != gradients[b].cols()) {
      throw DimensionError("gradient_check: gradient shape differs for block " + names[b]);
    }
    offsets.push_back(offsets.back() + static_cast<std::size_t>(blocks[b]->size()));
  }
  if (offsets.back() == 0) throw ArgumentError("gradient_check: nothing to probe");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, offsets.back() - 1);
  GradientReport r;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t flat = pick(rng);
    const std::size_t b = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                                   offsets.begin()) - 1;
    double& x = blocks[b]->data()[flat - offsets[b]];
    const double saved = x;
    x = saved + step;
    const double up = loss();
    x = saved - step;
    const double down = loss();
    x = saved;
    const double fd = (up - down) / (2.0 * step);
    const double an = gradients[b].data()[flat - offsets[b]];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
    if (!(rel <= r.max_rel_error)) {
      r.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      r.worst_block = names[b];
    }
    ++r.probes;
  }
  r.passed = r.max_rel_error <= tol;
  return r;
}

GradientReport gradient_check(ModelState& state, const graph::BipartiteGraph& g, const Triples& batch,
                              const LossConfig& loss, const RandomFeatureMap* features, std::size_t samples,
                              double tol, std::uint64_t seed) {
  const std::size_t probed = static_cast<std::size_t>(state.user_emb.size() + state.item_emb.size());
  if (probed > 2000) throw ArgumentError("gradient_check: graph too large for finite differences");
  auto grads = loss_and_gradients(state, g, batch, loss, features).second;
  auto blocks = parameter_blocks(state);
  auto names = parameter_names(state);
  if (state.attn.tie_directions) {
    // primed blocks are not free parameters when directions are tied
    for (std::size_t h = state.heads.size(); h-- > 0;) {
      const auto first = static_cast<std::ptrdiff_t>(2 + 6 * h + 3);
      blocks.erase(blocks.begin() + first, blocks.begin() + first + 3);
      names.erase(names.begin() + first, names.begin() + first + 3);
      grads.erase(grads.begin() + first, grads.begin() + first + 3);
    }
  }
  auto f = [&] {
    if (state.attn.tie_directions) {
      for (auto& h : state.heads) h.item_to_user = h.user_to_item;
    }
    return evaluate_loss(state, g, batch, loss, features);
  };
  // finite differences of an O(1) loss carry ~1e-11 absolute noise; the floor
  // keeps coordinates with vanishing gradients from reporting pure noise
  return gradient_check(blocks, names, f, grads, samples, tol, seed, 1e-5, 1e-6);
}

// ---- checkpoint ----------------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'H', 'G', 'F', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    if (!is_.read(reinterpret_cast<char*>(b), 8)) throw ParseError(0, std::string("checkpoint truncated at ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

 private:
  std::istream& is_;
};

void put_block(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) put_f64(os, m.data()[i]);
}

void get_block(Reader& r, Matrix& m, const std::string& name) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64(name.c_str());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, double margin) {
  state.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ArgumentError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_u64(os, state.num_users());
  put_u64(os, state.num_items());
  put_u64(os, state.space.dim());
  put_u64(os, state.heads.size());
  put_u64(os, state.layers);
  put_f64(os, state.space.k());
  put_f64(os, state.alpha);
  put_f64(os, margin);
  for (const Matrix* b : parameter_blocks(state)) put_block(os, *b);
  if (!os.flush()) throw ArgumentError("checkpoint: write to " + path.string() + " failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const attention::AttentionConfig& attn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArgumentError("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw ParseError(0, "checkpoint: bad magic bytes");
  Reader r(is);
  const std::uint64_t n = r.u64("N"), m = r.u64("M"), d = r.u64("d"), h = r.u64("H"), layers = r.u64("L");
  const double k = r.f64("K"), alpha = r.f64("alpha"), margin = r.f64("margin");
  // guard against absurd headers before allocating
  constexpr std::uint64_t kLimit = 1ULL << 32;
  if (n > kLimit || m > kLimit || d == 0 || d > (1u << 16) || h == 0 || h > 1024 || layers > 1024) {
    throw ParseError(0, "checkpoint: implausible header values");
  }
  const auto expected = 4 + 8 * 8 + 8 * ((n + m) * d + h * 6 * d * d + 2 * d);
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec || actual != expected) {
    throw ParseError(0, "checkpoint: file size " + std::to_string(actual) + " does not match header (expected " +
                            std::to_string(expected) + ")");
  }
  Checkpoint c;
  ModelState& s = c.state;
  try {
    s.space = geometry::CurvatureSpace(k, d);
  } catch (const ArgumentError& e) {
    throw ParseError(0, std::string("checkpoint: ") + e.what());
  }
  const auto di = static_cast<Index>(d);
  s.user_emb.resize(static_cast<Index>(n), di);
  s.item_emb.resize(static_cast<Index>(m), di);
  s.heads.resize(h);
  for (auto& hp : s.heads) {
    for (Matrix* b : head_blocks(hp)) b->resize(di, di);
  }
  s.gamma.resize(1, di);
  s.beta.resize(1, di);
  s.alpha = alpha;
  s.layers = layers;
  s.attn = attn;
  s.attn.heads = h;
  const auto names = parameter_names(s);
  const auto blocks = parameter_blocks(s);
  for (std::size_t b = 0; b < blocks.size(); ++b) get_block(r, *blocks[b], names[b]);
  c.margin = margin;
  try {
    s.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(0, std::string("checkpoint: ") + e.what());
  }
  return c;
}

}  // namespace hgf::train
