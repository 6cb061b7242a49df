#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caps2ne/graph.hpp"
#include "caps2ne/log.hpp"
#include "caps2ne/loss.hpp"
#include "caps2ne/parallel.hpp"
#include "caps2ne/rng.hpp"

namespace caps2ne {

using Embeddings = EmbeddingTable<double>;
using LabelSets = std::vector<std::vector<ClassId>>;

// ---------------------------------------------------------------- splits

struct EvalSplit {
  std::vector<NodeId> train;
  std::vector<NodeId> validation;  // empty for the fraction protocol
  std::vector<NodeId> test;
  std::string protocol;
};

// `repeats` splits: floor(gamma * |labeled|) uniform training nodes, the rest
// is test. Model selection uses cross-validation on train, so no validation.
inline std::vector<EvalSplit> make_fraction_splits(const LabelTable& labels, double gamma, std::size_t repeats,
                                                   std::uint64_t seed) {
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("fraction gamma must lie in (0, 1)");
  const auto labeled = labels.labeled_nodes();
  const auto n_train = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(labeled.size()) + 1e-9));
  if (n_train < 1) throw std::invalid_argument("gamma * |labeled| < 1: no training nodes");
  if (n_train >= labeled.size()) throw std::invalid_argument("gamma leaves no test nodes");
  std::vector<EvalSplit> splits;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto nodes = labeled;
    KeyedRng rng(seed, RngDomain::splits, r, 0);
    shuffle(nodes, rng);
    EvalSplit s;
    s.protocol = "fraction";
    s.train.assign(nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(nodes.begin() + static_cast<std::ptrdiff_t>(n_train), nodes.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

// Per split: `per_class` uniform nodes of each class (by first label) for
// training, then n_val validation and n_test test nodes from the remainder.
inline std::vector<EvalSplit> make_citation_splits(const LabelTable& labels, std::size_t per_class, std::size_t n_val,
                                                   std::size_t n_test, std::size_t repeats, std::uint64_t seed) {
  const auto labeled = labels.labeled_nodes();
  std::vector<std::size_t> class_size(labels.num_classes(), 0);
  for (NodeId v : labeled) ++class_size[labels.labels(v).front()];
  for (ClassId c = 0; c < labels.num_classes(); ++c)
    if (class_size[c] < per_class)
      throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(class_size[c]) +
                                  " labeled nodes, fewer than " + std::to_string(per_class) + " required");
  const std::size_t n_train = per_class * labels.num_classes();
  if (n_train + n_val + n_test > labeled.size())
    throw std::invalid_argument("not enough labeled nodes: need " + std::to_string(n_train + n_val + n_test) +
                                ", have " + std::to_string(labeled.size()));
  std::vector<EvalSplit> splits;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto nodes = labeled;
    KeyedRng rng(seed, RngDomain::splits, r, 1);
    shuffle(nodes, rng);
    EvalSplit s;
    s.protocol = "citation";
    std::vector<std::size_t> taken(labels.num_classes(), 0);
    std::vector<NodeId> rest;
    for (NodeId v : nodes) {
      const ClassId c = labels.labels(v).front();
      if (taken[c] < per_class) {
        ++taken[c];
        s.train.push_back(v);
      } else {
        rest.push_back(v);
      }
    }
    s.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val),
                  rest.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

inline void write_splits(std::ostream& out, std::span<const EvalSplit> splits) {
  auto ids = [&](const char* tag, const std::vector<NodeId>& v) {
    out << tag;
    for (NodeId x : v) out << ' ' << x;
    out << '\n';
  };
  for (std::size_t i = 0; i < splits.size(); ++i) {
    out << "# split " << i << " protocol=" << splits[i].protocol << '\n';
    ids("train:", splits[i].train);
    ids("val:", splits[i].validation);
    ids("test:", splits[i].test);
  }
}

// Reads "train:/val:/test:" sections; each "train:" line starts a new split.
inline std::vector<EvalSplit> read_splits(std::istream& in) {
  std::vector<EvalSplit> splits;
  std::string line;
  std::size_t lineno = 0;
  std::string protocol;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      const auto pos = body.find("protocol=");
      if (pos != std::string_view::npos) protocol = std::string(detail::trim(body.substr(pos + 9)));
      continue;
    }
    const auto colon = body.find(':');
    if (colon == std::string_view::npos) throw ParseError(lineno, "expected 'train:', 'val:' or 'test:'");
    const auto tag = body.substr(0, colon);
    std::vector<NodeId> ids;
    for (auto tok : detail::split_ws(body.substr(colon + 1))) {
      NodeId v = 0;
      if (!detail::parse_number(tok, v)) throw ParseError(lineno, "bad node id");
      ids.push_back(v);
    }
    if (tag == "train") {
      splits.emplace_back();
      splits.back().protocol = protocol;
      splits.back().train = std::move(ids);
    } else if (splits.empty()) {
      throw ParseError(lineno, "section before first 'train:'");
    } else if (tag == "val") {
      splits.back().validation = std::move(ids);
    } else if (tag == "test") {
      splits.back().test = std::move(ids);
    } else {
      throw ParseError(lineno, "unknown section '" + std::string(tag) + "'");
    }
  }
  return splits;
}

// ------------------------------------------------------------ classifier

struct LogRegOptions {
  double l2 = 1.0;
  double tolerance = 1e-6;  // on the gradient norm
  std::size_t max_iterations = 500;
};

// Dense design matrix plus 0/1 targets for one binary problem.
struct BinaryProblem {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> x;  // rows x dim
  std::vector<double> y;
};

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

// Mean binary cross-entropy + (l2/2) |w|^2; params = (w_1..w_dim, bias).
inline double logreg_objective(std::span<const double> params, const BinaryProblem& p, double l2) {
  double loss = 0;
  for (std::size_t i = 0; i < p.rows; ++i) {
    double z = params[p.dim];
    for (std::size_t j = 0; j < p.dim; ++j) z += params[j] * p.x[i * p.dim + j];
    loss += softplus(z) - p.y[i] * z;
  }
  double reg = 0;
  for (std::size_t j = 0; j < p.dim; ++j) reg += params[j] * params[j];
  return loss / static_cast<double>(p.rows) + 0.5 * l2 * reg;
}

inline std::vector<double> logreg_gradient(std::span<const double> params, const BinaryProblem& p, double l2) {
  std::vector<double> g(p.dim + 1, 0.0);
  for (std::size_t i = 0; i < p.rows; ++i) {
    const double* xi = p.x.data() + i * p.dim;
    double z = params[p.dim];
    for (std::size_t j = 0; j < p.dim; ++j) z += params[j] * xi[j];
    const double r = sigmoid(z) - p.y[i];
    for (std::size_t j = 0; j < p.dim; ++j) g[j] += r * xi[j];
    g[p.dim] += r;
  }
  for (auto& v : g) v /= static_cast<double>(p.rows);
  for (std::size_t j = 0; j < p.dim; ++j) g[j] += l2 * params[j];
  return g;
}

struct BinaryClassifier {
  std::vector<double> params;              // weights then bias
  std::optional<double> constant;          // set for degenerate classes
  double objective = 0;
  std::size_t iterations = 0;

  double probability(std::span<const double> x) const {
    if (constant) return *constant;
    double z = params.back();
    for (std::size_t j = 0; j + 1 < params.size(); ++j) z += params[j] * x[j];
    return sigmoid(z);
  }
};

// Damped Newton with Armijo backtracking. The Hessian gets a 1e-10 ridge so
// that l2 = 0 on separable data stays solvable.
inline BinaryClassifier fit_binary(const BinaryProblem& p, const LogRegOptions& opt) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(p.rows), d = static_cast<Eigen::Index>(p.dim);
  const Eigen::Map<const RowMatrix> X(p.x.data(), n, d);
  const Eigen::Map<const Eigen::VectorXd> y(p.y.data(), n);

  BinaryClassifier clf;
  clf.params.assign(p.dim + 1, 0.0);
  Eigen::Map<Eigen::VectorXd> theta(clf.params.data(), d + 1);
  double f = logreg_objective(clf.params, p, opt.l2);
  std::vector<double> trial(p.dim + 1);
  Eigen::VectorXd prob(n), grad(d + 1);
  Eigen::MatrixXd H(d + 1, d + 1);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    const Eigen::VectorXd z = (X * theta.head(d)).array() + theta(d);
    for (Eigen::Index i = 0; i < n; ++i) prob(i) = sigmoid(z(i));
    const Eigen::VectorXd r = (prob - y) / static_cast<double>(n);
    grad.head(d) = X.transpose() * r + opt.l2 * theta.head(d);
    grad(d) = r.sum();
    if (grad.norm() <= opt.tolerance) break;

    const Eigen::VectorXd s = (prob.array() * (1.0 - prob.array())).matrix() / static_cast<double>(n);
    H.topLeftCorner(d, d) = X.transpose() * s.asDiagonal() * X;
    H.topLeftCorner(d, d).diagonal().array() += opt.l2;
    H.topRightCorner(d, 1) = X.transpose() * s;
    H.bottomLeftCorner(1, d) = H.topRightCorner(d, 1).transpose();
    H(d, d) = s.sum();
    H.diagonal().array() += 1e-10;
    Eigen::VectorXd dir = -H.ldlt().solve(grad);
    double slope = grad.dot(dir);
    if (!dir.allFinite() || !(slope < 0)) {
      dir = -grad;
      slope = -grad.squaredNorm();
    }

    double step = 1.0, f_trial = f;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      for (Eigen::Index j = 0; j <= d; ++j) trial[j] = theta(j) + step * dir(j);
      f_trial = logreg_objective(trial, p, opt.l2);
      if (f_trial <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    std::copy(trial.begin(), trial.end(), clf.params.begin());
    f = f_trial;
    clf.iterations = it + 1;
  }
  clf.objective = f;
  return clf;
}

// One-vs-rest ensemble.
struct LogRegModel {
  std::size_t dim = 0;
  double l2 = 0;
  double tolerance = 0;
  std::vector<BinaryClassifier> classes;

  std::vector<double> probabilities(std::span<const double> x) const {
    std::vector<double> p(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c) p[c] = classes[c].probability(x);
    return p;
  }
};

inline LogRegModel train_logreg(const Embeddings& emb, std::span<const NodeId> train, const LabelTable& labels,
                                const LogRegOptions& opt = {}, unsigned threads = 1) {
  LogRegModel model;
  model.dim = emb.dim;
  model.l2 = opt.l2;
  model.tolerance = opt.tolerance;
  model.classes.resize(labels.num_classes());
  BinaryProblem base;
  base.rows = train.size();
  base.dim = emb.dim;
  base.x.reserve(train.size() * emb.dim);
  for (NodeId v : train) {
    if (v >= emb.rows) throw std::out_of_range("no embedding for training node " + std::to_string(v));
    const auto r = emb.row(v);
    base.x.insert(base.x.end(), r.begin(), r.end());
  }
  parallel_for(labels.num_classes(), threads, [&](unsigned, std::size_t c) {
    BinaryProblem p;
    p.rows = base.rows;
    p.dim = base.dim;
    p.y.resize(train.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto l = labels.labels(train[i]);
      p.y[i] = std::binary_search(l.begin(), l.end(), static_cast<ClassId>(c)) ? 1.0 : 0.0;
      positives += p.y[i] > 0;
    }
    if (positives == 0 || positives == train.size()) {
      log_warning("class " + std::to_string(c) + " has " + (positives ? "only positive" : "no positive") +
                  " training nodes; using a constant classifier");
      model.classes[c].params.assign(p.dim + 1, 0.0);
      model.classes[c].constant = positives ? 1.0 : 0.0;
      return;
    }
    p.x = base.x;
    model.classes[c] = fit_binary(p, opt);
  });
  return model;
}

enum class PredictMode {
  single_label,  // argmax, ties to the lowest class id
  top_l,         // top-L classes, L = number of gold labels of the node
  threshold,     // every class with probability >= 0.5
};

inline LabelSets predict(const LogRegModel& model, const Embeddings& emb, std::span<const NodeId> ids,
                         PredictMode mode, const LabelTable* gold = nullptr) {
  if (mode == PredictMode::top_l && gold == nullptr) throw std::invalid_argument("top-L prediction needs gold label counts");
  LabelSets out;
  out.reserve(ids.size());
  for (NodeId v : ids) {
    const auto p = model.probabilities(emb.row(v));
    std::vector<ClassId> pred;
    switch (mode) {
      case PredictMode::single_label: {
        std::size_t best = 0;
        for (std::size_t c = 1; c < p.size(); ++c)
          if (p[c] > p[best]) best = c;
        if (!p.empty()) pred.push_back(static_cast<ClassId>(best));
        break;
      }
      case PredictMode::top_l: {
        std::vector<ClassId> order(p.size());
        std::iota(order.begin(), order.end(), ClassId{0});
        std::stable_sort(order.begin(), order.end(), [&](ClassId a, ClassId b) { return p[a] > p[b]; });
        const std::size_t L = std::min(gold->labels(v).size(), p.size());
        pred.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(L));
        break;
      }
      case PredictMode::threshold:
        for (std::size_t c = 0; c < p.size(); ++c)
          if (p[c] >= 0.5) pred.push_back(static_cast<ClassId>(c));
        break;
    }
    std::sort(pred.begin(), pred.end());
    out.push_back(std::move(pred));
  }
  return out;
}

// --------------------------------------------------------------- metrics

struct Metrics {
  double accuracy = 0;  // exact set match
  double micro_f1 = 0;
  double macro_f1 = 0;
};

// Micro-F1 pools TP/FP/FN over classes; macro-F1 averages per-class F1 over
// all num_classes classes, counting 0/0 as F1 = 0.
inline Metrics metrics(const LabelSets& pred, const LabelSets& gold, std::size_t num_classes) {
  if (pred.size() != gold.size()) throw std::invalid_argument("metrics: prediction and gold sizes differ");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& p = pred[i];
    const auto& g = gold[i];
    exact += p == g;
    std::size_t a = 0, b = 0;
    while (a < p.size() || b < g.size()) {
      if (b == g.size() || (a < p.size() && p[a] < g[b])) {
        ++fp.at(p[a++]);
      } else if (a == p.size() || g[b] < p[a]) {
        ++fn.at(g[b++]);
      } else {
        ++tp.at(p[a]);
        ++a;
        ++b;
      }
    }
  }
  auto f1 = [](std::size_t t, std::size_t f_p, std::size_t f_n) {
    const std::size_t den = 2 * t + f_p + f_n;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(t) / static_cast<double>(den);
  };
  Metrics m;
  m.accuracy = pred.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(pred.size());
  std::size_t TP = 0, FP = 0, FN = 0;
  double macro = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    TP += tp[c];
    FP += fp[c];
    FN += fn[c];
    macro += f1(tp[c], fp[c], fn[c]);
  }
  m.micro_f1 = f1(TP, FP, FN);
  m.macro_f1 = num_classes ? macro / static_cast<double>(num_classes) : 0.0;
  return m;
}

inline LabelSets gold_sets(const LabelTable& labels, std::span<const NodeId> ids) {
  LabelSets out;
  out.reserve(ids.size());
  for (NodeId v : ids) {
    const auto l = labels.labels(v);
    out.emplace_back(l.begin(), l.end());
  }
  return out;
}

// ------------------------------------------------------------ evaluation

enum class Protocol { citation, fraction };

struct Snapshot {
  std::uint32_t epoch = 0;
  Embeddings embeddings;
};

struct EvalOptions {
  Protocol protocol = Protocol::citation;
  LogRegOptions classifier;
  std::size_t folds = 10;
  PredictMode multi_label_mode = PredictMode::top_l;
  std::uint64_t seed = 1;  // fold assignment
  unsigned threads = 1;
};

struct SplitResult {
  std::size_t split = 0;
  std::uint32_t epoch_selected = 0;
  double selection_score = 0;
  Metrics test;
};

struct EvalReport {
  Protocol protocol = Protocol::citation;
  std::vector<SplitResult> splits;
  Metrics mean;
};

namespace detail {

inline PredictMode prediction_mode(const EvalOptions& opt) {
  return opt.protocol == Protocol::citation ? PredictMode::single_label : opt.multi_label_mode;
}

inline Metrics fit_and_score(const Embeddings& emb, std::span<const NodeId> train, std::span<const NodeId> test,
                             const LabelTable& labels, const EvalOptions& opt) {
  const auto model = train_logreg(emb, train, labels, opt.classifier, opt.threads);
  const auto pred = predict(model, emb, test, prediction_mode(opt), &labels);
  return metrics(pred, gold_sets(labels, test), labels.num_classes());
}

// Mean micro-F1 of k-fold cross-validation restricted to `train`.
inline double cross_validated_micro_f1(const Embeddings& emb, std::span<const NodeId> train, const LabelTable& labels,
                                       const EvalOptions& opt, std::size_t split_index) {
  std::vector<NodeId> ids(train.begin(), train.end());
  KeyedRng rng(opt.seed, RngDomain::folds, split_index);
  shuffle(ids, rng);
  const std::size_t folds = std::max<std::size_t>(2, std::min(opt.folds, ids.size()));
  double total = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<NodeId> fit, held;
    for (std::size_t i = 0; i < ids.size(); ++i) (i % folds == f ? held : fit).push_back(ids[i]);
    total += fit_and_score(emb, fit, held, labels, opt).micro_f1;
  }
  return total / static_cast<double>(folds);
}

}  // namespace detail

// Per split, picks the snapshot with the best selection score (validation
// accuracy for citation, cross-validated micro-F1 on train for fraction;
// ties go to the earliest epoch) and reports its test metrics.
inline EvalReport evaluate_run(std::span<const Snapshot> snapshots, std::span<const EvalSplit> splits,
                               const LabelTable& labels, const EvalOptions& opt) {
  if (snapshots.empty()) throw std::invalid_argument("evaluate_run needs at least one embedding snapshot");
  EvalReport report;
  report.protocol = opt.protocol;
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& split = splits[s];
    std::size_t best = 0;
    double best_score = -1;
    for (std::size_t e = 0; e < snapshots.size(); ++e) {
      const auto& emb = snapshots[e].embeddings;
      double score = 0;
      if (opt.protocol == Protocol::citation) {
        if (split.validation.empty()) throw std::invalid_argument("citation protocol needs a validation set");
        score = detail::fit_and_score(emb, split.train, split.validation, labels, opt).accuracy;
      } else {
        score = snapshots.size() == 1 ? 0.0 : detail::cross_validated_micro_f1(emb, split.train, labels, opt, s);
      }
      if (score > best_score) {
        best_score = score;
        best = e;
      }
    }
    SplitResult r;
    r.split = s;
    r.epoch_selected = snapshots[best].epoch;
    r.selection_score = best_score;
    r.test = detail::fit_and_score(snapshots[best].embeddings, split.train, split.test, labels, opt);
    report.splits.push_back(r);
  }
  for (const auto& r : report.splits) {
    report.mean.accuracy += r.test.accuracy;
    report.mean.micro_f1 += r.test.micro_f1;
    report.mean.macro_f1 += r.test.macro_f1;
  }
  if (!report.splits.empty()) {
    const auto n = static_cast<double>(report.splits.size());
    report.mean.accuracy /= n;
    report.mean.micro_f1 /= n;
    report.mean.macro_f1 /= n;
  }
  return report;
}

inline const char* protocol_name(Protocol p) { return p == Protocol::citation ? "citation" : "fraction"; }

inline void write_report(std::ostream& out, const EvalReport& report, const std::string& dataset) {
  char buf[256];
  out << "# macro_f1 counts classes with no gold and no predicted positives as F1=0\n";
  out << "protocol,dataset,split,epoch_selected,accuracy,micro_f1,macro_f1\n";
  for (const auto& r : report.splits) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%u,%.6f,%.6f,%.6f\n", protocol_name(report.protocol), dataset.c_str(),
                  r.split, r.epoch_selected, r.test.accuracy, r.test.micro_f1, r.test.macro_f1);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%s,%s,mean,,%.6f,%.6f,%.6f\n", protocol_name(report.protocol), dataset.c_str(),
                report.mean.accuracy, report.mean.micro_f1, report.mean.macro_f1);
  out << buf;
}

}  // namespace caps2ne
