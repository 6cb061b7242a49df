#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "caps2ne/adam.hpp"
#include "caps2ne/capsule.hpp"
#include "caps2ne/config.hpp"
#include "caps2ne/graph.hpp"
#include "caps2ne/loss.hpp"
#include "caps2ne/parallel.hpp"
#include "caps2ne/rng.hpp"
#include "caps2ne/walks.hpp"

namespace caps2ne {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct EpochStats {
  std::uint32_t epoch = 0;  // 1-based
  double mean_loss = 0;
  double wall_seconds = 0;
};

// O rows i.i.d. uniform on [-sqrt(3/k), sqrt(3/k)] (unit variance per logit
// against a unit-norm e).
template <std::floating_point Real>
EmbeddingTable<Real> init_output_embeddings(std::size_t num_nodes, std::size_t k, std::uint64_t seed) {
  EmbeddingTable<Real> O(num_nodes, k);
  const double bound = std::sqrt(3.0 / static_cast<double>(k));
  for (std::size_t v = 0; v < num_nodes; ++v) {
    KeyedRng rng(seed, RngDomain::embeddings, v);
    for (auto& x : O.row(v)) x = static_cast<Real>(rng.uniform(-bound, bound));
  }
  return O;
}

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

// Snapshot of everything needed to resume or to run inference.
struct Checkpoint {
  static constexpr char kMagic[4] = {'C', '2', 'N', 'E'};
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  std::uint64_t num_nodes = 0;
  FeatureSource feature_source = FeatureSource::learned;
  std::uint64_t feature_dim = 0;
  std::uint64_t epoch = 0;       // completed epochs
  std::uint64_t rng_cursor = 0;  // next epoch's stream index
  std::uint64_t adam_steps = 0;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw std::runtime_error("checkpoint has no tensor '" + name + "'");
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

namespace detail {

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::uint64_t limit = std::uint64_t{1} << 30) {
  const auto n = get<std::uint64_t>(in);
  if (n > limit) throw std::runtime_error("checkpoint string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace detail

// Layout: "C2NE", u32 version, config JSON (u64 length + bytes), u64 fields,
// u32 tensor count, then per tensor: name, u32 rank, u64 dims, f64 data.
inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write(Checkpoint::kMagic, 4);
  detail::put<std::uint32_t>(out, Checkpoint::kVersion);
  detail::put_string(out, nlohmann::json(ck.config).dump());
  detail::put<std::uint64_t>(out, ck.num_nodes);
  detail::put<std::uint8_t>(out, ck.feature_source == FeatureSource::learned ? 1 : 0);
  detail::put<std::uint64_t>(out, ck.feature_dim);
  detail::put<std::uint64_t>(out, ck.epoch);
  detail::put<std::uint64_t>(out, ck.rng_cursor);
  detail::put<std::uint64_t>(out, ck.adam_steps);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_string(out, t.name);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) detail::put<std::uint64_t>(out, dim);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, Checkpoint::kMagic, 4) != 0) throw std::runtime_error("not a C2NE checkpoint");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = nlohmann::json::parse(detail::get_string(in)).get<TrainConfig>();
  ck.num_nodes = detail::get<std::uint64_t>(in);
  ck.feature_source = detail::get<std::uint8_t>(in) ? FeatureSource::learned : FeatureSource::given_fixed;
  ck.feature_dim = detail::get<std::uint64_t>(in);
  ck.epoch = detail::get<std::uint64_t>(in);
  ck.rng_cursor = detail::get<std::uint64_t>(in);
  ck.adam_steps = detail::get<std::uint64_t>(in);
  const auto count = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = detail::get_string(in, 4096);
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("checkpoint tensor rank out of range");
    std::uint64_t size = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(detail::get<std::uint64_t>(in));
      size *= t.shape.back();
    }
    if (size > (std::uint64_t{1} << 34)) throw std::runtime_error("checkpoint tensor too large");
    t.data.resize(size);
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(size * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated");
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

template <std::floating_point Real>
struct ModelParams {
  CapsuleWeights<Real> weights;    // W_1..W_{q-1}
  EmbeddingTable<Real> output;     // O
  BasicFeatureTable<Real> features;  // X
};

// Rebuilds W (and X when learned) from a checkpoint, for inference.
template <std::floating_point Real>
CapsuleWeights<Real> weights_from_checkpoint(const Checkpoint& ck) {
  const auto& t = ck.tensor("W");
  if (t.shape.size() != 3) throw std::runtime_error("checkpoint tensor W must have rank 3");
  CapsuleWeights<Real> w(t.shape[0], t.shape[1], t.shape[2]);
  for (std::size_t i = 0; i < t.data.size(); ++i) w.values[i] = static_cast<Real>(t.data[i]);
  return w;
}

// Epoch loop over a fixed pair corpus. Pairs are reshuffled per epoch from
// the stream (seed, epoch); negatives for the pair at shuffled position p in
// epoch e come from the stream (seed, e, p). Gradients are mean-reduced over
// the batch and applied with one Adam step per batch.
template <std::floating_point Real>
class Trainer {
 public:
  Trainer(const Graph& graph, BasicFeatureTable<Real> features, TrainConfig cfg,
          std::optional<std::vector<Walk>> walks = std::nullopt)
      : graph_(&graph), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (features.num_nodes() != graph.num_nodes())
      throw std::invalid_argument("feature table has " + std::to_string(features.num_nodes()) + " rows, graph has " +
                                  std::to_string(graph.num_nodes()) + " nodes");
    if (cfg_.num_negatives >= graph.num_nodes())
      throw std::invalid_argument("number of negatives must be smaller than the number of nodes");
    const std::size_t n = cfg_.walks.context_size();
    params_.weights = init_capsule_weights<Real>(n, cfg_.embedding_dim, features.dim(), cfg_.seed);
    params_.output = init_output_embeddings<Real>(graph.num_nodes(), cfg_.embedding_dim, cfg_.seed);
    params_.features = std::move(features);

    std::vector<Walk> corpus_walks = walks ? std::move(*walks) : sample_walks(graph, cfg_.walks, threads());
    for (const auto& w : corpus_walks)
      for (NodeId v : w)
        if (v >= graph.num_nodes()) throw std::invalid_argument("walk corpus references unknown node");
    pairs_ = build_pairs(corpus_walks, cfg_.walks);
    std::vector<std::uint64_t> visits(graph.num_nodes(), 0);
    for (const auto& w : corpus_walks)
      for (NodeId v : w) ++visits[v];
    sampler_.emplace(graph.num_nodes(), cfg_.negative_distribution, visits);

    tensor_w_ = adam_.add_tensor("W", params_.weights.values.size());
    tensor_o_ = adam_.add_tensor("O", params_.output.values.size());
    if (params_.features.learned()) tensor_x_ = adam_.add_tensor("X", params_.features.values().size());
  }

  static Trainer with_learned_features(const Graph& graph, const TrainConfig& cfg) {
    return Trainer(graph, init_learned_features<Real>(graph.num_nodes(), cfg.learned_feature_dim, cfg.seed), cfg);
  }

  EpochStats run_epoch() {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t num_pairs = pairs_.size();
    std::vector<std::size_t> order(num_pairs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    KeyedRng shuffle_rng(cfg_.seed, RngDomain::shuffle, epoch_);
    shuffle(order, shuffle_rng);

    const bool learn_x = params_.features.learned();
    const unsigned workers = cfg_.deterministic ? 1u : threads();
    std::vector<Accumulator> acc(workers);
    for (auto& a : acc) a.resize(params_, learn_x);

    double total_loss = 0;
    for (std::size_t begin = 0; begin < num_pairs; begin += cfg_.batch_size) {
      const std::size_t count = std::min(cfg_.batch_size, num_pairs - begin);
      const Real scale = Real(1) / static_cast<Real>(count);
      std::vector<double> losses(count);
      if (cfg_.deterministic && threads() == 1) {
        for (std::size_t j = 0; j < count; ++j) {
          const PairResult r = compute_pair(order[begin + j], begin + j, learn_x);
          acc[0].add(r, params_, scale, learn_x);
          losses[j] = static_cast<double>(r.loss.loss);
        }
      } else if (cfg_.deterministic) {
        // Pure per-pair work in parallel, then reduction in pair order.
        std::vector<PairResult> results(count);
        parallel_for(count, threads(), [&](unsigned, std::size_t j) {
          results[j] = compute_pair(order[begin + j], begin + j, learn_x);
        });
        for (std::size_t j = 0; j < count; ++j) {
          acc[0].add(results[j], params_, scale, learn_x);
          losses[j] = static_cast<double>(results[j].loss.loss);
        }
      } else {
        parallel_for(count, workers, [&](unsigned w, std::size_t j) {
          PairResult r = compute_pair(order[begin + j], begin + j, learn_x);
          acc[w].add(r, params_, scale, learn_x);
          losses[j] = static_cast<double>(r.loss.loss);
        });
        for (unsigned w = 1; w < workers; ++w) acc[0].merge(acc[w]);
      }
      for (double l : losses) total_loss += l;

      std::vector<typename Adam<Real>::Update> updates = {
          {tensor_w_, params_.weights.values, acc[0].weights},
          {tensor_o_, params_.output.values, acc[0].output},
      };
      if (learn_x) updates.push_back({tensor_x_, params_.features.mutable_values(), acc[0].features});
      adam_.step(updates, cfg_.learning_rate);
      for (auto& a : acc) a.clear();
    }
    ++epoch_;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {epoch_, num_pairs ? total_loss / static_cast<double>(num_pairs) : 0.0, secs};
  }

  std::uint32_t epoch() const { return epoch_; }
  const ModelParams<Real>& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }
  const PairCorpus& pairs() const { return pairs_; }
  const Adam<Real>& optimizer() const { return adam_; }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config = cfg_;
    ck.num_nodes = graph_->num_nodes();
    ck.feature_source = params_.features.source();
    ck.feature_dim = params_.features.dim();
    ck.epoch = epoch_;
    ck.rng_cursor = epoch_;
    ck.adam_steps = adam_.steps();
    const auto& W = params_.weights;
    auto add = [&](std::string name, std::vector<std::uint64_t> shape, std::span<const Real> data) {
      ck.tensors.push_back({std::move(name), std::move(shape), {data.begin(), data.end()}});
    };
    const std::vector<std::uint64_t> w_shape = {W.capsules, W.out_dim, W.in_dim};
    const std::vector<std::uint64_t> o_shape = {params_.output.rows, params_.output.dim};
    const std::vector<std::uint64_t> x_shape = {params_.features.num_nodes(), params_.features.dim()};
    add("W", w_shape, W.values);
    add("O", o_shape, params_.output.values);
    if (params_.features.learned()) add("X", x_shape, params_.features.values());
    for (std::size_t t = 0; t < adam_.num_tensors(); ++t) {
      const auto& shape = t == tensor_w_ ? w_shape : t == tensor_o_ ? o_shape : x_shape;
      add("adam.m." + adam_.name(t), shape, adam_.moments(t).first);
      add("adam.v." + adam_.name(t), shape, adam_.moments(t).second);
    }
    return ck;
  }

  // Resumes from a checkpoint. `features` must be the given table for
  // given-feature runs; for learned runs it is replaced by the stored X.
  static Trainer resume(const Graph& graph, const Checkpoint& ck, BasicFeatureTable<Real> features,
                        std::optional<std::vector<Walk>> walks = std::nullopt, std::optional<unsigned> threads = {}) {
    TrainConfig cfg = ck.config;
    if (threads) cfg.threads = *threads;
    if (ck.num_nodes != graph.num_nodes()) throw std::runtime_error("checkpoint was trained on a different graph size");
    if (ck.feature_source == FeatureSource::learned)
      features = BasicFeatureTable<Real>(graph.num_nodes(), ck.feature_dim, FeatureSource::learned);
    else if (features.dim() != ck.feature_dim || features.learned())
      throw std::runtime_error("checkpoint expects given features of dimension " + std::to_string(ck.feature_dim));
    Trainer t(graph, std::move(features), cfg, std::move(walks));
    auto load = [&](const std::string& name, std::span<Real> dst) {
      const auto& src = ck.tensor(name);
      if (src.data.size() != dst.size()) throw std::runtime_error("checkpoint tensor '" + name + "' has wrong size");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(src.data[i]);
    };
    load("W", t.params_.weights.values);
    load("O", t.params_.output.values);
    if (ck.feature_source == FeatureSource::learned) load("X", t.params_.features.mutable_values());
    for (std::size_t i = 0; i < t.adam_.num_tensors(); ++i) {
      load("adam.m." + t.adam_.name(i), t.adam_.moments(i).first);
      load("adam.v." + t.adam_.name(i), t.adam_.moments(i).second);
    }
    t.adam_.set_steps(ck.adam_steps);
    t.epoch_ = static_cast<std::uint32_t>(ck.rng_cursor);
    return t;
  }

 private:
  struct PairResult {
    ForwardTrace<Real> trace;
    SampledSoftmaxResult<Real> loss;
    CapsuleGradients<Real> grads;
  };

  struct Accumulator {
    std::vector<Real> weights, output, features;

    void resize(const ModelParams<Real>& p, bool learn_x) {
      weights.assign(p.weights.values.size(), Real(0));
      output.assign(p.output.values.size(), Real(0));
      if (learn_x) features.assign(p.features.values().size(), Real(0));
    }
    void clear() {
      std::fill(weights.begin(), weights.end(), Real(0));
      std::fill(output.begin(), output.end(), Real(0));
      std::fill(features.begin(), features.end(), Real(0));
    }
    void add(const PairResult& r, const ModelParams<Real>& p, Real scale, bool learn_x) {
      r.grads.accumulate_weights(r.trace, weights, scale);
      const auto e = r.trace.e();
      const std::size_t k = p.output.dim;
      for (std::size_t j = 0; j < r.loss.rows.size(); ++j) {
        const Real g = scale * r.loss.grad_logits[j];
        Real* row = output.data() + std::size_t{r.loss.rows[j]} * k;
        for (std::size_t c = 0; c < k; ++c) row[c] += g * e[c];
      }
      if (learn_x) {
        const std::size_t d = p.features.dim();
        for (std::size_t i = 0; i < r.trace.context.size(); ++i) {
          Real* row = features.data() + std::size_t{r.trace.context[i]} * d;
          const Real* g = r.grads.inputs.data() + i * d;
          for (std::size_t c = 0; c < d; ++c) row[c] += scale * g[c];
        }
      }
    }
    void merge(const Accumulator& other) {
      for (std::size_t i = 0; i < weights.size(); ++i) weights[i] += other.weights[i];
      for (std::size_t i = 0; i < output.size(); ++i) output[i] += other.output[i];
      for (std::size_t i = 0; i < features.size(); ++i) features[i] += other.features[i];
    }
  };

  PairResult compute_pair(std::size_t pair_index, std::size_t position, bool learn_x) const {
    PairResult r;
    r.trace = forward<Real>(pairs_.context(pair_index), params_.weights, params_.features, cfg_.routing);
    const NodeId target = pairs_.targets[pair_index];
    KeyedRng rng(cfg_.seed, RngDomain::negatives, epoch_, position);
    const auto negatives = sampler_->sample(cfg_.num_negatives, target, rng);
    r.loss = sampled_softmax_loss<Real>(r.trace.e(), target, negatives, params_.output, cfg_.exclude_positive);
    r.grads = backward<Real>(r.trace, params_.weights, r.loss.grad_e, cfg_.routing, learn_x);
    return r;
  }

  unsigned threads() const { return resolve_threads(cfg_.threads); }

  const Graph* graph_;
  TrainConfig cfg_;
  ModelParams<Real> params_;
  PairCorpus pairs_;
  std::optional<NegativeSampler> sampler_;
  Adam<Real> adam_;
  std::size_t tensor_w_ = 0, tensor_o_ = 0, tensor_x_ = 0;
  std::uint32_t epoch_ = 0;
};

}  // namespace caps2ne
