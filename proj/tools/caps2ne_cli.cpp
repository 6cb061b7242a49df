#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "caps2ne/caps2ne.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace caps2ne;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv) {
    doc_ = {{"tool", "caps2ne_cli"}, {"version", kVersion}, {"command", std::move(command)}, {"argv", argv},
            {"inputs", json::object()}};
  }
  void input(const std::string& role, const std::string& path) {
    if (path.empty()) return;
    doc_["inputs"][role] = {{"path", fs::absolute(path).string()}, {"sha1", git_blob_sha1(read_file(path))}};
  }
  json& operator[](const std::string& key) { return doc_[key]; }
  void write(const fs::path& path) const { open_out(path) << doc_.dump(2) << '\n'; }

 private:
  json doc_;
};

// Highest feature index + 1 over a triplet file.
std::size_t scan_feature_dim(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    const auto tokens = detail::split_ws(detail::trim(line));
    std::size_t j = 0;
    if (tokens.size() == 3 && detail::parse_number(tokens[1], j)) dim = std::max(dim, j + 1);
  }
  return dim;
}

FeatureTable read_features(const std::string& path, std::size_t dim, std::size_t num_nodes) {
  if (dim == 0) dim = scan_feature_dim(path);
  if (dim == 0) throw std::runtime_error("cannot infer feature dimension from '" + path + "'; pass --feature-dim");
  auto in = open_in(path);
  return load_features(in, dim, num_nodes);
}

Graph read_graph(const std::string& path) {
  auto in = open_in(path);
  return load_edge_list(in);
}

std::vector<NodeId> read_ids(const std::string& path) {
  auto in = open_in(path);
  std::vector<NodeId> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    for (auto tok : detail::split_ws(body)) {
      NodeId v = 0;
      if (!detail::parse_number(tok, v)) throw ParseError(lineno, "bad node id '" + std::string(tok) + "'");
      ids.push_back(v);
    }
  }
  return ids;
}

void parse_targets(const std::string& spec, WalkConfig& cfg) {
  cfg.fixed_indexes.clear();
  if (spec == "random") {
    cfg.target_strategy = TargetStrategy::random_one;
  } else if (spec == "rotate") {
    cfg.target_strategy = TargetStrategy::rotate_all;
  } else if (spec.rfind("idx:", 0) == 0) {
    cfg.target_strategy = TargetStrategy::fixed_indexes;
    std::stringstream ss(spec.substr(4));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::uint32_t i = 0;
      if (!detail::parse_number(detail::trim(tok), i)) throw UsageError("bad target index '" + tok + "'");
      cfg.fixed_indexes.push_back(i);
    }
    if (cfg.fixed_indexes.empty()) throw UsageError("idx: needs at least one index");
  } else {
    throw UsageError("--targets must be random, rotate or idx:i,j,...");
  }
}

template <class Fn>
void validate_as_usage(Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

struct Common {
  unsigned threads = 0;
  bool fast = false;
  bool verbose = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--threads", c.threads, "worker threads (default: C2NE_THREADS or 1)");
  cmd->add_flag("--deterministic", "fixed reduction order (default)");
  cmd->add_flag("--fast", c.fast, "per-worker gradient accumulation; not bitwise reproducible");
  cmd->add_flag("-v,--verbose", c.verbose, "progress on stderr");
  cmd->add_flag("--quiet", c.quiet, "suppress warnings");
}

void apply_logging(const Common& c) {
  log_level() = c.quiet ? LogLevel::quiet : c.verbose ? LogLevel::info : LogLevel::warning;
}

// ------------------------------------------------------------------ walks

struct WalksArgs {
  std::string edges, out;
  WalkConfig cfg;
  Common common;
};

int cmd_walks(const WalksArgs& a, const std::vector<std::string>& argv) {
  apply_logging(a.common);
  validate_as_usage([&] { a.cfg.validate(); });
  const auto g = read_graph(a.edges);
  const auto walks = sample_walks(g, a.cfg, resolve_threads(a.common.threads));
  if (a.out.empty()) {
    write_corpus(std::cout, walks, a.cfg);
    return 0;
  }
  auto out = open_out(a.out);
  write_corpus(out, walks, a.cfg);
  Manifest m("walks", argv);
  m.input("edges", a.edges);
  m["config"] = a.cfg;
  m.write(a.out + ".manifest.json");
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string edges, features, corpus, resume, out_dir;
  std::string targets = "rotate", rule = "ours", neg_dist = "uniform";
  std::size_t learn_features = 0, feature_dim = 0;
  TrainConfig cfg;
  bool stop_gradient = false, float32 = false, snapshot_initial = false;
  Common common;
};

template <std::floating_point Real>
void write_snapshot(const fs::path& dir, std::uint32_t epoch, const Trainer<Real>& t) {
  auto out = open_out(dir / ("emb_epoch_" + std::to_string(epoch) + ".txt"));
  write_embeddings(out, t.params().output);
}

template <std::floating_point Real>
void train_loop(Trainer<Real>& t, const TrainArgs& a, std::uint32_t until, bool resumed) {
  const fs::path dir = a.out_dir;
  const fs::path log_path = dir / "loss.csv";
  const bool append = resumed && fs::exists(log_path);
  auto log = open_out(log_path, append ? std::ios::app : std::ios::out);
  if (!append) log << "epoch,mean_loss,wall_seconds\n";
  if (a.snapshot_initial && t.epoch() == 0) write_snapshot(dir, 0, t);
  char buf[96];
  while (t.epoch() < until) {
    const auto s = t.run_epoch();
    std::snprintf(buf, sizeof buf, "%u,%.9g,%.3f\n", s.epoch, s.mean_loss, s.wall_seconds);
    log << buf << std::flush;
    log_info("epoch " + std::to_string(s.epoch) + " mean loss " + std::to_string(s.mean_loss));
    write_snapshot(dir, s.epoch, t);
    auto ck = open_out(dir / "checkpoint.c2ne", std::ios::out | std::ios::binary);
    write_checkpoint(ck, t.checkpoint());
  }
}

template <std::floating_point Real>
void run_train(const Graph& g, const TrainArgs& a, TrainConfig cfg, std::optional<std::vector<Walk>> walks) {
  if (!a.resume.empty()) {
    auto in = std::ifstream(a.resume, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + a.resume + "'");
    const auto ck = read_checkpoint(in);
    BasicFeatureTable<Real> features;
    if (ck.feature_source == FeatureSource::given_fixed) {
      if (a.features.empty()) throw UsageError("checkpoint uses given features; pass --features again");
      features = read_features(a.features, ck.feature_dim, g.num_nodes()).cast<Real>();
    }
    auto t = Trainer<Real>::resume(g, ck, std::move(features), std::move(walks), cfg.threads);
    train_loop(t, a, cfg.epochs, true);
    return;
  }
  BasicFeatureTable<Real> features =
      a.features.empty() ? init_learned_features<Real>(g.num_nodes(), cfg.learned_feature_dim, cfg.seed)
                         : read_features(a.features, a.feature_dim, g.num_nodes()).template cast<Real>();
  Trainer<Real> t(g, std::move(features), cfg, std::move(walks));
  train_loop(t, a, cfg.epochs, false);
}

int cmd_train(TrainArgs a, const std::vector<std::string>& argv) {
  apply_logging(a.common);
  if (!a.features.empty() && a.learn_features) throw UsageError("--features and --learn-features are exclusive");
  TrainConfig cfg = a.cfg;
  parse_targets(a.targets, cfg.walks);
  cfg.walks.seed = cfg.seed;
  cfg.routing.rule = a.rule == "sabour" ? RoutingRule::sabour : RoutingRule::ours;
  cfg.routing.stop_gradient = a.stop_gradient;
  cfg.negative_distribution = a.neg_dist == "unigram-0.75" ? NegativeDistribution::unigram75 : NegativeDistribution::uniform;
  if (a.learn_features) cfg.learned_feature_dim = a.learn_features;
  cfg.threads = resolve_threads(a.common.threads);
  cfg.deterministic = !a.common.fast;
  validate_as_usage([&] { cfg.validate(); });

  const auto g = read_graph(a.edges);
  std::optional<std::vector<Walk>> walks;
  if (!a.corpus.empty()) {
    auto in = open_in(a.corpus);
    CorpusHeader header;
    walks = read_corpus(in, &header);
    if (header.walk_length != cfg.walks.walk_length)
      throw UsageError("corpus has q=" + std::to_string(header.walk_length) + " but --q is " +
                       std::to_string(cfg.walks.walk_length));
    cfg.walks.walks_per_node = header.walks_per_node;
  }
  fs::create_directories(a.out_dir);

  Manifest m("train", argv);
  m.input("edges", a.edges);
  m.input("features", a.features);
  m.input("corpus", a.corpus);
  m.input("resume", a.resume);
  m["config"] = cfg;
  m["precision"] = a.float32 ? "float32" : "float64";
  m.write(fs::path(a.out_dir) / "manifest.json");

  if (a.float32)
    run_train<float>(g, a, cfg, std::move(walks));
  else
    run_train<double>(g, a, cfg, std::move(walks));
  return 0;
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  std::string checkpoint, edges, features, new_ids, out;
  std::size_t feature_dim = 0;
  std::uint32_t Z = 10;
  std::uint64_t seed = 1;
  Common common;
};

int cmd_infer(const InferArgs& a, const std::vector<std::string>& argv) {
  apply_logging(a.common);
  if (a.Z < 1) throw UsageError("--Z must be >= 1");
  auto ck_in = std::ifstream(a.checkpoint, std::ios::binary);
  if (!ck_in) throw std::runtime_error("cannot open '" + a.checkpoint + "'");
  const auto ck = read_checkpoint(ck_in);
  const auto g = read_graph(a.edges);
  const auto ids = read_ids(a.new_ids);
  for (NodeId v : ids) {
    if (v < ck.num_nodes)
      throw std::runtime_error("node " + std::to_string(v) + " is part of the training graph (ids < " +
                               std::to_string(ck.num_nodes) + "); only new nodes can be inferred");
    if (v >= g.num_nodes()) throw std::runtime_error("node " + std::to_string(v) + " is not in '" + a.edges + "'");
  }

  FeatureTable X;
  if (ck.feature_source == FeatureSource::learned) {
    if (!a.features.empty()) throw UsageError("checkpoint has learned features; --features does not apply");
    log_warning("learned features: new nodes have no trained feature row and contribute zero input");
    X = FeatureTable(g.num_nodes(), ck.feature_dim, FeatureSource::learned);
    const auto& stored = ck.tensor("X");
    std::copy(stored.data.begin(), stored.data.end(), X.mutable_values().begin());
  } else {
    if (a.features.empty()) throw UsageError("checkpoint was trained on given features; pass --features");
    X = read_features(a.features, a.feature_dim ? a.feature_dim : ck.feature_dim, g.num_nodes());
    if (X.dim() != ck.feature_dim)
      throw std::runtime_error("feature dimension " + std::to_string(X.dim()) + " differs from the trained " +
                               std::to_string(ck.feature_dim));
  }
  const auto W = weights_from_checkpoint<double>(ck);
  const InductiveConfig icfg{a.Z, ck.config.walks.walk_length, a.seed};
  const auto emb = infer_embeddings(W, X, ck.config.routing, g, ids, icfg, resolve_threads(a.common.threads));

  auto out = open_out(a.out);
  write_embeddings(out, emb, ids);
  Manifest m("infer", argv);
  m.input("checkpoint", a.checkpoint);
  m.input("edges", a.edges);
  m.input("features", a.features);
  m.input("new_ids", a.new_ids);
  m["config"] = {{"Z", a.Z}, {"seed", a.seed}, {"q", icfg.walk_length}};
  m.write(a.out + ".manifest.json");
  return 0;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string embeddings_dir, embeddings, labels, protocol = "citation", splits_file, splits_out, out, dataset;
  std::vector<std::string> overlays;
  bool gen_splits = false;
  double gamma = 0.5;
  std::size_t repeats = 10, per_class = 20, n_val = 500, n_test = 1000, folds = 10;
  std::string multi_label = "topl";
  LogRegOptions classifier;
  std::uint64_t seed = 1;
  Common common;
};

std::vector<Snapshot> load_snapshots(const EvalArgs& a, std::vector<std::vector<bool>>& present) {
  std::vector<std::pair<std::uint32_t, fs::path>> files;
  if (!a.embeddings.empty()) files.emplace_back(0, a.embeddings);
  if (!a.embeddings_dir.empty()) {
    if (!fs::is_directory(a.embeddings_dir)) throw std::runtime_error("'" + a.embeddings_dir + "' is not a directory");
    const std::regex pattern(R"(emb_epoch_(\d+)\.txt)");
    for (const auto& entry : fs::directory_iterator(a.embeddings_dir)) {
      std::smatch match;
      const auto name = entry.path().filename().string();
      if (std::regex_match(name, match, pattern))
        files.emplace_back(static_cast<std::uint32_t>(std::stoul(match[1])), entry.path());
    }
  }
  if (files.empty()) throw std::runtime_error("no embedding snapshots found (expected emb_epoch_<N>.txt files)");
  std::sort(files.begin(), files.end());

  std::vector<Embeddings> overlays;
  std::vector<std::vector<bool>> overlay_present;
  for (const auto& path : a.overlays) {
    auto in = open_in(path);
    overlay_present.emplace_back();
    overlays.push_back(read_embeddings(in, &overlay_present.back()));
  }

  std::vector<Snapshot> snaps;
  for (const auto& [epoch, path] : files) {
    auto in = open_in(path);
    std::vector<bool> mask;
    auto emb = read_embeddings(in, &mask);
    for (std::size_t o = 0; o < overlays.size(); ++o) {
      if (overlays[o].dim != emb.dim) throw std::runtime_error("overlay '" + a.overlays[o] + "' has a different k");
      if (overlays[o].rows > emb.rows) {
        emb.values.resize(overlays[o].rows * emb.dim, 0.0);
        emb.rows = overlays[o].rows;
        mask.resize(emb.rows, false);
      }
      for (std::size_t v = 0; v < overlays[o].rows; ++v)
        if (overlay_present[o][v]) {
          std::copy(overlays[o].row(v).begin(), overlays[o].row(v).end(), emb.row(v).begin());
          mask[v] = true;
        }
    }
    present.push_back(std::move(mask));
    snaps.push_back({epoch, std::move(emb)});
  }
  return snaps;
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  apply_logging(a.common);
  if (a.embeddings_dir.empty() == a.embeddings.empty())
    throw UsageError("pass exactly one of --embeddings-dir or --embeddings");
  if (a.splits_file.empty() == !a.gen_splits) throw UsageError("pass exactly one of --splits-file or --gen-splits");
  EvalOptions opt;
  opt.protocol = a.protocol == "fraction" ? Protocol::fraction : Protocol::citation;
  opt.classifier = a.classifier;
  opt.folds = a.folds;
  opt.multi_label_mode = a.multi_label == "threshold" ? PredictMode::threshold : PredictMode::top_l;
  opt.seed = a.seed;
  opt.threads = resolve_threads(a.common.threads);
  if (!(opt.classifier.l2 >= 0)) throw UsageError("--l2 must be >= 0");

  auto labels_in = open_in(a.labels);
  const auto labels = load_labels(labels_in);
  std::vector<std::vector<bool>> present;
  const auto snaps = load_snapshots(a, present);

  std::vector<EvalSplit> splits;
  if (a.gen_splits) {
    validate_as_usage([&] {
      splits = opt.protocol == Protocol::citation
                   ? make_citation_splits(labels, a.per_class, a.n_val, a.n_test, a.repeats, a.seed)
                   : make_fraction_splits(labels, a.gamma, a.repeats, a.seed);
    });
    if (!a.splits_out.empty()) {
      auto out = open_out(a.splits_out);
      write_splits(out, splits);
    }
  } else {
    auto in = open_in(a.splits_file);
    splits = read_splits(in);
    if (splits.empty()) throw std::runtime_error("'" + a.splits_file + "' contains no splits");
  }
  for (const auto& s : splits)
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (NodeId v : *part) {
        if (!labels.labeled(v)) throw std::runtime_error("split node " + std::to_string(v) + " has no label");
        for (std::size_t i = 0; i < snaps.size(); ++i)
          if (v >= present[i].size() || !present[i][v])
            throw std::runtime_error("node " + std::to_string(v) + " has no embedding in snapshot epoch " +
                                     std::to_string(snaps[i].epoch));
      }

  const auto report = evaluate_run(snaps, splits, labels, opt);
  const std::string dataset = a.dataset.empty() ? fs::path(a.labels).stem().string() : a.dataset;
  if (a.out.empty()) {
    write_report(std::cout, report, dataset);
    return 0;
  }
  auto out = open_out(a.out);
  write_report(out, report, dataset);
  Manifest m("eval", argv);
  m.input("labels", a.labels);
  m.input("splits", a.splits_file);
  m.input("embeddings", a.embeddings);
  for (std::size_t i = 0; i < a.overlays.size(); ++i) m.input("overlay" + std::to_string(i), a.overlays[i]);
  if (!a.embeddings_dir.empty()) {
    json snapshots = json::object();
    for (const auto& entry : fs::directory_iterator(a.embeddings_dir))
      if (entry.path().extension() == ".txt")
        snapshots[entry.path().filename().string()] = git_blob_sha1(read_file(entry.path()));
    m["snapshots"] = snapshots;
  }
  m["config"] = {{"protocol", protocol_name(opt.protocol)}, {"l2", opt.classifier.l2}, {"folds", opt.folds},
                 {"seed", a.seed}, {"gamma", a.gamma}, {"repeats", a.repeats}};
  m.write(a.out + ".manifest.json");
  return 0;
}

// ---------------------------------------------------------------- holdout

struct HoldoutArgs {
  std::string edges, ids, features, labels, out_dir;
  std::size_t feature_dim = 0;
};

// Relabels the graph so that held-out nodes get the highest ids, writes the
// training graph without them and the full graph with them.
int cmd_holdout(const HoldoutArgs& a, const std::vector<std::string>& argv) {
  const auto g = read_graph(a.edges);
  const auto held = read_ids(a.ids);
  std::vector<bool> keep(g.num_nodes(), true);
  for (NodeId v : held) {
    if (v >= g.num_nodes()) throw std::runtime_error("held-out node " + std::to_string(v) + " not in graph");
    keep[v] = false;
  }
  std::vector<NodeId> old_of_new, new_of_old(g.num_nodes());
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    if (keep[v]) old_of_new.push_back(v);
  const std::size_t num_train = old_of_new.size();
  for (NodeId v = 0; v < g.num_nodes(); ++v)
    if (!keep[v]) old_of_new.push_back(v);
  for (NodeId n = 0; n < old_of_new.size(); ++n) new_of_old[old_of_new[n]] = n;

  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  std::vector<std::pair<NodeId, NodeId>> all, train;
  for (NodeId u = 0; u < g.num_nodes(); ++u)
    for (NodeId v : g.neighbors(u))
      if (u < v) {
        all.emplace_back(new_of_old[u], new_of_old[v]);
        if (keep[u] && keep[v]) train.emplace_back(new_of_old[u], new_of_old[v]);
      }
  {
    auto out = open_out(dir / "train.edges");
    write_edge_list(out, Graph::from_edges(num_train, train));
  }
  {
    auto out = open_out(dir / "full.edges");
    write_edge_list(out, Graph::from_edges(g.num_nodes(), all));
  }
  {
    auto out = open_out(dir / "id_map.tsv");
    for (NodeId n = 0; n < old_of_new.size(); ++n) out << n << '\t' << old_of_new[n] << '\n';
    auto ids = open_out(dir / "new_ids.txt");
    for (std::size_t n = num_train; n < old_of_new.size(); ++n) ids << n << '\n';
  }
  if (!a.features.empty()) {
    const auto X = read_features(a.features, a.feature_dim, g.num_nodes());
    auto out = open_out(dir / "features.txt");
    char buf[64];
    for (NodeId n = 0; n < old_of_new.size(); ++n) {
      const auto row = X.row(old_of_new[n]);
      for (std::size_t j = 0; j < row.size(); ++j)
        if (row[j] != 0) {
          std::snprintf(buf, sizeof buf, "%u %zu %.17g\n", n, j, row[j]);
          out << buf;
        }
    }
  }
  if (!a.labels.empty()) {
    auto in = open_in(a.labels);
    const auto labels = load_labels(in, g.num_nodes());
    auto out = open_out(dir / "labels.txt");
    for (NodeId n = 0; n < old_of_new.size(); ++n) {
      if (!labels.labeled(old_of_new[n])) continue;
      out << n;
      const auto l = labels.labels(old_of_new[n]);
      for (std::size_t i = 0; i < l.size(); ++i) out << (i ? ',' : ' ') << l[i];
      out << '\n';
    }
  }
  Manifest m("holdout", argv);
  m.input("edges", a.edges);
  m.input("ids", a.ids);
  m.input("features", a.features);
  m.input("labels", a.labels);
  m["num_train_nodes"] = num_train;
  m.write(dir / "manifest.json");
  return 0;
}

int run(const std::vector<std::string>& argv);

int cmd_replay(const std::string& path) {
  const auto doc = json::parse(read_file(path));
  for (const auto& [role, input] : doc.at("inputs").items()) {
    const auto sha = git_blob_sha1(read_file(input.at("path").get<std::string>()));
    if (sha != input.at("sha1").get<std::string>())
      throw std::runtime_error("input '" + role + "' (" + input.at("path").get<std::string>() +
                               ") changed since the manifest was written");
  }
  auto argv = doc.at("argv").get<std::vector<std::string>>();
  if (!argv.empty() && argv.front() == "replay") throw std::runtime_error("manifest refers to another replay");
  return run(argv);
}

int run(const std::vector<std::string>& argv) {
  CLI::App app{"Caps2NE node embeddings: walks, training, inductive inference and evaluation", "caps2ne_cli"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  WalksArgs walks;
  auto* w = app.add_subcommand("walks", "sample a random-walk corpus");
  w->add_option("--edges", walks.edges, "edge list")->required();
  w->add_option("--T", walks.cfg.walks_per_node, "walks per node")->capture_default_str();
  w->add_option("--q", walks.cfg.walk_length, "walk length")->capture_default_str();
  w->add_option("--seed", walks.cfg.seed)->capture_default_str();
  w->add_option("--out", walks.out, "corpus file (default: stdout)");
  add_common(w, walks.common);

  TrainArgs train;
  train.cfg.walks.walks_per_node = 64;
  train.cfg.walks.walk_length = 10;
  auto* t = app.add_subcommand("train", "train capsule weights and node embeddings");
  t->add_option("--edges", train.edges, "edge list")->required();
  auto* feat = t->add_option("--features", train.features, "given feature triplets 'node index value'");
  t->add_option("--feature-dim", train.feature_dim, "feature dimension (default: max index + 1)");
  auto* learn = t->add_option("--learn-features", train.learn_features, "learn d-dimensional features (default 128)");
  feat->excludes(learn);
  t->add_option("--T", train.cfg.walks.walks_per_node, "walks per node")->capture_default_str();
  t->add_option("--q", train.cfg.walks.walk_length, "walk length")->capture_default_str();
  t->add_option("--targets", train.targets, "random | rotate | idx:i,j,... (0-based positions)")->capture_default_str();
  t->add_option("--k", train.cfg.embedding_dim, "embedding size")->capture_default_str();
  t->add_option("--neg", train.cfg.num_negatives, "sampled negatives per pair")->capture_default_str();
  t->add_option("--batch", train.cfg.batch_size)->capture_default_str();
  t->add_option("--lr", train.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  t->add_option("--epochs", train.cfg.epochs, "total epochs (also the target when resuming)")->capture_default_str();
  t->add_option("--m", train.cfg.routing.iterations, "routing iterations")->capture_default_str();
  t->add_option("--rule", train.rule, "routing update rule")
      ->check(CLI::IsMember({"ours", "sabour"}))
      ->capture_default_str();
  t->add_option("--neg-dist", train.neg_dist, "negative distribution")
      ->check(CLI::IsMember({"uniform", "unigram-0.75"}))
      ->capture_default_str();
  t->add_flag("--exclude-positive", train.cfg.exclude_positive, "leave the target out of the softmax denominator");
  t->add_flag("--stop-gradient-routing", train.stop_gradient, "treat final coupling coefficients as constants");
  t->add_option("--seed", train.cfg.seed)->capture_default_str();
  t->add_option("--corpus", train.corpus, "precomputed walk corpus");
  t->add_option("--resume", train.resume, "continue from a checkpoint");
  t->add_option("--out-dir", train.out_dir, "output directory")->required();
  t->add_flag("--float32", train.float32, "single-precision training");
  t->add_flag("--snapshot-initial", train.snapshot_initial, "also write emb_epoch_0.txt before training");
  add_common(t, train.common);

  InferArgs infer;
  auto* inf = app.add_subcommand("infer", "infer embeddings of nodes unseen during training");
  inf->add_option("--checkpoint", infer.checkpoint)->required();
  inf->add_option("--edges-with-new", infer.edges, "graph including the new nodes")->required();
  inf->add_option("--new-ids", infer.new_ids, "file of new node ids")->required();
  inf->add_option("--features", infer.features, "given features covering the new nodes");
  inf->add_option("--feature-dim", infer.feature_dim);
  inf->add_option("--Z", infer.Z, "sampled contexts per node")->capture_default_str();
  inf->add_option("--seed", infer.seed)->capture_default_str();
  inf->add_option("--out", infer.out, "embedding file")->required();
  add_common(inf, infer.common);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "node classification with one-vs-rest logistic regression");
  e->add_option("--embeddings-dir", ev.embeddings_dir, "directory of emb_epoch_<N>.txt snapshots");
  e->add_option("--embeddings", ev.embeddings, "single embedding file");
  e->add_option("--overlay", ev.overlays, "embedding file whose rows replace or extend every snapshot");
  e->add_option("--labels", ev.labels, "labels 'node c1,c2,...'")->required();
  e->add_option("--protocol", ev.protocol)->check(CLI::IsMember({"citation", "fraction"}))->capture_default_str();
  e->add_option("--gamma", ev.gamma, "training fraction (fraction protocol)")->capture_default_str();
  e->add_option("--repeats", ev.repeats, "generated splits")->capture_default_str();
  e->add_option("--per-class", ev.per_class, "training nodes per class (citation)")->capture_default_str();
  e->add_option("--val", ev.n_val, "validation nodes (citation)")->capture_default_str();
  e->add_option("--test", ev.n_test, "test nodes (citation)")->capture_default_str();
  e->add_option("--splits-file", ev.splits_file, "read splits");
  e->add_flag("--gen-splits", ev.gen_splits, "generate splits");
  e->add_option("--splits-out", ev.splits_out, "write generated splits");
  e->add_option("--l2", ev.classifier.l2, "L2 strength of the classifier")->capture_default_str();
  e->add_option("--folds", ev.folds, "cross-validation folds (fraction)")->capture_default_str();
  e->add_option("--multi-label", ev.multi_label, "multi-label decision rule")
      ->check(CLI::IsMember({"topl", "threshold"}))
      ->capture_default_str();
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--dataset", ev.dataset, "dataset column (default: labels file stem)");
  e->add_option("--out", ev.out, "report CSV (default: stdout)");
  add_common(e, ev.common);

  HoldoutArgs hold;
  auto* h = app.add_subcommand("holdout", "relabel a graph for the inductive setting");
  h->add_option("--edges", hold.edges)->required();
  h->add_option("--ids", hold.ids, "file of node ids to hold out")->required();
  h->add_option("--features", hold.features);
  h->add_option("--feature-dim", hold.feature_dim);
  h->add_option("--labels", hold.labels);
  h->add_option("--out-dir", hold.out_dir)->required();

  std::string manifest;
  auto* r = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  r->add_option("manifest", manifest)->required();

  try {
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "usage error: " << ex.what() << "\nrun with --help for usage\n";
    return 2;
  }

  try {
    if (*w) return cmd_walks(walks, argv);
    if (*t) return cmd_train(train, argv);
    if (*inf) return cmd_infer(infer, argv);
    if (*e) return cmd_eval(ev, argv);
    if (*h) return cmd_holdout(hold, argv);
    if (*r) return cmd_replay(manifest);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << '\n';
    return 2;
  } catch (const ParseError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
