#include <gtest/gtest.h>

#include <sstream>

#include "caps2ne/trainer.hpp"
#include "toy_graph.hpp"

using namespace caps2ne;

namespace {

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.005;
  cfg.batch_size = 32;
  cfg.num_negatives = 16;
  cfg.embedding_dim = 8;
  cfg.learned_feature_dim = 8;
  cfg.walks.walks_per_node = 16;
  cfg.walks.walk_length = 6;
  cfg.walks.target_strategy = TargetStrategy::rotate_all;
  cfg.seed = 3;
  return cfg;
}

const caps2ne::testing::TwoBlockGraph& toy() {
  static const auto g = caps2ne::testing::make_two_block_graph(40, 0.5, 0.02, 7);
  return g;
}

}  // namespace

TEST(Trainer, ZeroLearningRateKeepsParameters) {
  auto cfg = toy_config();
  cfg.learning_rate = 0;
  auto t = Trainer<double>::with_learned_features(toy().graph, cfg);
  const auto before = t.params();
  t.run_epoch();
  EXPECT_EQ(t.params().weights, before.weights);
  EXPECT_EQ(t.params().output, before.output);
  EXPECT_EQ(t.params().features, before.features);
}

TEST(Trainer, LossDecreasesOnToyGraph) {
  auto t = Trainer<double>::with_learned_features(toy().graph, toy_config());
  std::vector<double> losses;
  for (int e = 0; e < 10; ++e) losses.push_back(t.run_epoch().mean_loss);
  int decreases = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) decreases += losses[i] < losses[i - 1];
  EXPECT_GE(decreases, 8);
  EXPECT_LT(losses.back(), losses.front());
  EXPECT_EQ(t.epoch(), 10u);
}

TEST(Trainer, DeterministicAcrossThreadCounts) {
  auto cfg = toy_config();
  cfg.walks.walks_per_node = 4;
  auto a = Trainer<double>::with_learned_features(toy().graph, cfg);
  cfg.threads = 4;
  auto b = Trainer<double>::with_learned_features(toy().graph, cfg);
  for (int e = 0; e < 2; ++e) EXPECT_EQ(a.run_epoch().mean_loss, b.run_epoch().mean_loss);
  EXPECT_EQ(a.params().weights, b.params().weights);
  EXPECT_EQ(a.params().output, b.params().output);
  EXPECT_EQ(a.params().features, b.params().features);
}

TEST(Trainer, FastModeStaysCloseToDeterministic) {
  auto cfg = toy_config();
  cfg.walks.walks_per_node = 4;
  auto a = Trainer<double>::with_learned_features(toy().graph, cfg);
  cfg.deterministic = false;
  cfg.threads = 3;
  auto b = Trainer<double>::with_learned_features(toy().graph, cfg);
  EXPECT_NEAR(a.run_epoch().mean_loss, b.run_epoch().mean_loss, 1e-9);
  for (std::size_t i = 0; i < a.params().weights.values.size(); ++i)
    EXPECT_NEAR(a.params().weights.values[i], b.params().weights.values[i], 1e-9);
}

TEST(Trainer, CheckpointRoundTripAndResumeMatchContinuousRun) {
  auto cfg = toy_config();
  cfg.walks.walks_per_node = 4;
  auto straight = Trainer<double>::with_learned_features(toy().graph, cfg);
  straight.run_epoch();
  std::stringstream file;
  write_checkpoint(file, straight.checkpoint());
  const auto ck = read_checkpoint(file);
  EXPECT_EQ(ck.epoch, 1u);
  EXPECT_EQ(ck.tensor("W").data, std::vector<double>(straight.params().weights.values));
  EXPECT_TRUE(ck.has_tensor("X"));
  EXPECT_EQ(ck.config.seed, cfg.seed);

  auto resumed = Trainer<double>::resume(toy().graph, ck, {});
  EXPECT_EQ(resumed.params().weights, straight.params().weights);
  EXPECT_EQ(resumed.params().features, straight.params().features);
  EXPECT_EQ(straight.run_epoch().mean_loss, resumed.run_epoch().mean_loss);
  EXPECT_EQ(resumed.params().output, straight.params().output);
}

TEST(Trainer, CorruptCheckpointRejected) {
  std::stringstream bad("NOPE");
  EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
  auto t = Trainer<double>::with_learned_features(toy().graph, toy_config());
  std::stringstream file;
  write_checkpoint(file, t.checkpoint());
  const std::string bytes = file.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), std::runtime_error);
}

TEST(Trainer, GivenFeaturesStayFixed) {
  std::ostringstream triplets;
  for (NodeId v = 0; v < 40; ++v) triplets << v << ' ' << (v < 20 ? 0 : 1) << " 1\n" << v << ' ' << 2 + v % 5 << " 1\n";
  std::istringstream in(triplets.str());
  const auto X = load_features(in, 7, 40);
  auto t = Trainer<double>(toy().graph, X, toy_config());
  t.run_epoch();
  EXPECT_EQ(t.params().features, X);
  EXPECT_EQ(t.optimizer().num_tensors(), 2u);
  EXPECT_FALSE(t.checkpoint().has_tensor("X"));
  EXPECT_THROW(Trainer<double>::resume(toy().graph, t.checkpoint(), BasicFeatureTable<double>(40, 3, FeatureSource::given_fixed)),
               std::runtime_error);
}

TEST(Trainer, RejectsInconsistentInputs) {
  auto cfg = toy_config();
  EXPECT_THROW(Trainer<double>(toy().graph, init_learned_features<double>(39, 8, 1), cfg), std::invalid_argument);
  cfg.num_negatives = 40;
  EXPECT_THROW(Trainer<double>::with_learned_features(toy().graph, cfg), std::invalid_argument);
  cfg = toy_config();
  cfg.batch_size = 0;
  EXPECT_THROW(Trainer<double>::with_learned_features(toy().graph, cfg), std::invalid_argument);
}

TEST(Trainer, CitationScaleSettingsAccepted) {
  const auto big = caps2ne::testing::make_two_block_graph(300, 0.05, 0.005, 11);
  TrainConfig cfg;
  cfg.walks.walks_per_node = 64;
  cfg.walks.walk_length = 10;
  cfg.batch_size = 128;
  cfg.embedding_dim = 128;
  cfg.num_negatives = 256;
  cfg.learning_rate = 1e-4;
  auto t = Trainer<double>::with_learned_features(big.graph, cfg);
  EXPECT_EQ(t.params().weights.capsules, 9u);
  EXPECT_EQ(t.pairs().size(), 300u * 64 * 10);
}

TEST(Trainer, SabourRoutingAlsoTrains) {
  auto cfg = toy_config();
  cfg.routing.iterations = 3;
  cfg.routing.rule = RoutingRule::sabour;
  cfg.walks.walks_per_node = 8;
  auto t = Trainer<double>::with_learned_features(toy().graph, cfg);
  const double first = t.run_epoch().mean_loss;
  double last = first;
  for (int e = 0; e < 4; ++e) last = t.run_epoch().mean_loss;
  EXPECT_LT(last, first);
}

TEST(Trainer, FloatPrecisionRuns) {
  auto t = Trainer<float>::with_learned_features(toy().graph, toy_config());
  const auto s = t.run_epoch();
  EXPECT_TRUE(std::isfinite(s.mean_loss));
}
