#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "caps2ne/capsule.hpp"
#include "caps2ne/loss.hpp"
#include "caps2ne/walks.hpp"

namespace caps2ne {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t num_negatives = 256;  // |V'|
  std::uint32_t epochs = 1;
  std::size_t embedding_dim = 128;  // k
  std::size_t learned_feature_dim = 128;  // d, used only when features are learned
  WalkConfig walks;
  RoutingConfig routing;
  std::uint64_t seed = 1;
  NegativeDistribution negative_distribution = NegativeDistribution::uniform;
  bool exclude_positive = false;
  unsigned threads = 1;
  bool deterministic = true;

  void validate() const {
    if (!(learning_rate >= 0)) throw std::invalid_argument("learning rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (num_negatives < 1) throw std::invalid_argument("number of negatives must be >= 1");
    if (embedding_dim < 1) throw std::invalid_argument("embedding size k must be >= 1");
    walks.validate();
    routing.validate();
  }
};

NLOHMANN_JSON_SERIALIZE_ENUM(TargetStrategy, {{TargetStrategy::random_one, "random"},
                                              {TargetStrategy::rotate_all, "rotate"},
                                              {TargetStrategy::fixed_indexes, "fixed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RoutingRule, {{RoutingRule::ours, "ours"}, {RoutingRule::sabour, "sabour"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NegativeDistribution, {{NegativeDistribution::uniform, "uniform"},
                                                    {NegativeDistribution::unigram75, "unigram-0.75"}})

inline void to_json(nlohmann::json& j, const WalkConfig& c) {
  j = {{"T", c.walks_per_node},
       {"q", c.walk_length},
       {"targets", c.target_strategy},
       {"fixed_indexes", c.fixed_indexes},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, WalkConfig& c) {
  j.at("T").get_to(c.walks_per_node);
  j.at("q").get_to(c.walk_length);
  j.at("targets").get_to(c.target_strategy);
  j.at("fixed_indexes").get_to(c.fixed_indexes);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const RoutingConfig& c) {
  j = {{"m", c.iterations}, {"rule", c.rule}, {"stop_gradient", c.stop_gradient}};
}
inline void from_json(const nlohmann::json& j, RoutingConfig& c) {
  j.at("m").get_to(c.iterations);
  j.at("rule").get_to(c.rule);
  j.at("stop_gradient").get_to(c.stop_gradient);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.learning_rate},
       {"batch", c.batch_size},
       {"neg", c.num_negatives},
       {"epochs", c.epochs},
       {"k", c.embedding_dim},
       {"learned_d", c.learned_feature_dim},
       {"walks", c.walks},
       {"routing", c.routing},
       {"seed", c.seed},
       {"neg_dist", c.negative_distribution},
       {"exclude_positive", c.exclude_positive},
       {"threads", c.threads},
       {"deterministic", c.deterministic}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("lr").get_to(c.learning_rate);
  j.at("batch").get_to(c.batch_size);
  j.at("neg").get_to(c.num_negatives);
  j.at("epochs").get_to(c.epochs);
  j.at("k").get_to(c.embedding_dim);
  j.at("learned_d").get_to(c.learned_feature_dim);
  j.at("walks").get_to(c.walks);
  j.at("routing").get_to(c.routing);
  j.at("seed").get_to(c.seed);
  j.at("neg_dist").get_to(c.negative_distribution);
  j.at("exclude_positive").get_to(c.exclude_positive);
  j.at("threads").get_to(c.threads);
  j.at("deterministic").get_to(c.deterministic);
}

}  // namespace caps2ne
