/*
 * Copyright 2026 The medcf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "medcf/analysis.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "medcf/error.h"

namespace medcf {
namespace {

constexpr double kArccoshFloor = 1.0 + 1e-12;
constexpr double kProbFloor = 1e-12;
constexpr double kGradClip = 4.0;
constexpr double kMinVariance = 1e-12;

double Clip(double g) { return std::clamp(g, -kGradClip, kGradClip); }

// Lorentz product of two hyperboloid points given by (x, y).
double Lorentz(double xi, double yi, double xj, double yj) {
  const double zi = std::sqrt(1.0 + xi * xi + yi * yi);
  const double zj = std::sqrt(1.0 + xj * xj + yj * yj);
  return zi * zj - xi * xj - yi * yj;
}

double ArccoshClamped(double b) {
  return std::acosh(std::max(b, kArccoshFloor));
}

double PairLoss(double w, double d) {
  const double q =
      std::clamp(1.0 / (1.0 + d * d), kProbFloor, 1.0 - kProbFloor);
  return -w * std::log(q) - (1.0 - w) * std::log(1.0 - q);
}

// Moves point i (and j when `move_j`) along -coef * dB/d(params).
void ApplyPairGradient(std::vector<double>& x, std::vector<double>& y, int i,
                       int j, double coef, double lr, bool move_j) {
  const double zi = std::sqrt(1.0 + x[i] * x[i] + y[i] * y[i]);
  const double zj = std::sqrt(1.0 + x[j] * x[j] + y[j] * y[j]);
  const double gxi = Clip(coef * (x[i] / zi * zj - x[j]));
  const double gyi = Clip(coef * (y[i] / zi * zj - y[j]));
  const double gxj = Clip(coef * (x[j] / zj * zi - x[i]));
  const double gyj = Clip(coef * (y[j] / zj * zi - y[i]));
  x[i] -= lr * gxi;
  y[i] -= lr * gyi;
  if (move_j) {
    x[j] -= lr * gxj;
    y[j] -= lr * gyj;
  }
}

// d / sinh(d), continuous at 0.
double DOverSinh(double d) { return d < 1e-8 ? 1.0 : d / std::sinh(d); }

double SquaredDistance(const Matrix& a, int i, const Matrix& b, int j,
                       ClusterDistance distance) {
  const double sq = (a.row(i) - b.row(j)).squaredNorm();
  if (distance == ClusterDistance::kEuclidean) return sq;
  const double na = std::min(a.row(i).squaredNorm(), 1.0 - 1e-12);
  const double nb = std::min(b.row(j).squaredNorm(), 1.0 - 1e-12);
  const double d = std::acosh(1.0 + 2.0 * sq / ((1.0 - na) * (1.0 - nb)));
  return d * d;
}

struct Assignment {
  std::vector<int> labels;
  std::vector<double> dist;  // squared distance to the assigned centroid
};

Assignment Assign(const Matrix& points, const Matrix& centroids,
                  ClusterDistance distance) {
  Assignment a;
  const int n = static_cast<int>(points.rows());
  a.labels.assign(n, 0);
  a.dist.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < centroids.rows(); ++c) {
      const double d = SquaredDistance(points, i, centroids, c, distance);
      if (d < best) {
        best = d;
        a.labels[i] = c;
      }
    }
    a.dist[i] = best;
  }
  return a;
}

Matrix SeedPlusPlus(const Matrix& points, int k, std::mt19937_64& rng,
                    ClusterDistance distance) {
  const int n = static_cast<int>(points.rows());
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  centroids.row(0) = points.row(pick(rng));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i],
                       SquaredDistance(points, i, centroids, c - 1, distance));
      total += d2[i];
    }
    int chosen = n - 1;
    if (total <= 0.0) {
      chosen = pick(rng);
    } else {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target) {
          chosen = i;
          break;
        }
      }
    }
    centroids.row(c) = points.row(chosen);
  }
  return centroids;
}

KMeansResult Lloyd(const Matrix& points, Matrix centroids,
                   ClusterDistance distance) {
  constexpr int kMaxIterations = 300;
  const int k = static_cast<int>(centroids.rows());
  const int n = static_cast<int>(points.rows());
  Assignment a = Assign(points, centroids, distance);
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    // Repair empty clusters one at a time from the worst-fit point.
    for (int c = 0; c < k; ++c) {
      if (std::find(a.labels.begin(), a.labels.end(), c) != a.labels.end())
        continue;
      int far = 0;
      for (int i = 1; i < n; ++i) {
        if (a.dist[i] > a.dist[far]) far = i;
      }
      centroids.row(c) = points.row(far);
      a.labels[far] = c;
      a.dist[far] = 0.0;
    }
    Matrix next = Matrix::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      next.row(a.labels[i]) += points.row(i);
      ++counts[a.labels[i]];
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      next.row(c) /= static_cast<double>(counts[c]);
      moved = std::max(moved, (next.row(c) - centroids.row(c)).norm());
    }
    centroids = std::move(next);
    a = Assign(points, centroids, distance);
    if (moved < 1e-6) break;
  }
  KMeansResult out;
  out.centroids = std::move(centroids);
  out.assignments = std::move(a.labels);
  out.inertia = std::accumulate(a.dist.begin(), a.dist.end(), 0.0);
  return out;
}

}  // namespace

void GraphConfig::Validate() const {
  if (k_neighbors < 1) throw InvalidArgument("k_neighbors must be >= 1");
  if (!(graph_epsilon > 0.0))
    throw InvalidArgument("graph_epsilon must be > 0");
}

void EmbedConfig::Validate() const {
  if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (negative_samples < 0)
    throw InvalidArgument("negative_samples must be >= 0");
  if (!(learning_rate > 0.0))
    throw InvalidArgument("learning rate must be > 0");
  if (!(init_radius > 0.0)) throw InvalidArgument("init radius must be > 0");
  if (objective_interval < 1)
    throw InvalidArgument("objective interval must be >= 1");
}

void ClusterConfig::Validate() const {
  if (k_min < 1 || k_max < k_min)
    throw InvalidArgument("invalid cluster range");
  if (restarts < 1) throw InvalidArgument("restarts must be >= 1");
}

double CosineDistance(const MedicationSet& a, const MedicationSet& b) {
  if (a.size() != b.size())
    throw ShapeError("cosine distance: length mismatch");
  const int na = a.Count();
  const int nb = b.Count();
  if (na == 0 || nb == 0) return 1.0;
  return 1.0 - a.Intersect(b) / std::sqrt(static_cast<double>(na) * nb);
}

std::vector<std::vector<int>> NearestNeighbors(
    std::span<const MedicationSet> vectors, int k) {
  const int n = static_cast<int>(vectors.size());
  const int kk = std::min(k, n - 1);
  std::vector<std::vector<int>> out(n);
  std::vector<std::pair<double, int>> row;
  for (int i = 0; i < n; ++i) {
    row.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) row.emplace_back(CosineDistance(vectors[i], vectors[j]), j);
    }
    std::partial_sort(row.begin(), row.begin() + kk, row.end());
    for (int t = 0; t < kk; ++t) out[i].push_back(row[t].second);
  }
  return out;
}

FuzzyGraph BuildGraph(std::span<const MedicationSet> vectors,
                      const GraphConfig& config) {
  config.Validate();
  const int n = static_cast<int>(vectors.size());
  if (n < 2) throw InvalidArgument("graph needs at least 2 points");
  const auto knn = NearestNeighbors(vectors, config.k_neighbors);
  const double target = std::log2(static_cast<double>(config.k_neighbors));

  std::map<std::pair<int, int>, std::pair<double, double>> directed;
  for (int i = 0; i < n; ++i) {
    std::vector<double> dist;
    for (int j : knn[i]) dist.push_back(CosineDistance(vectors[i], vectors[j]));
    const double rho = dist.front();
    const auto mass = [&](double s) {
      double sum = 0.0;
      for (double d : dist) sum += std::exp(-std::max(0.0, d - rho) / s);
      return sum;
    };
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double s = 1.0;
    for (int it = 0; it < 128; ++it) {
      const double m = mass(s);
      if (std::abs(m - target) < 1e-5) break;
      if (m > target) {
        hi = s;
        s = 0.5 * (lo + hi);
      } else {
        lo = s;
        s = std::isinf(hi) ? 2.0 * s : 0.5 * (lo + hi);
      }
      if (s <= 0.0) s = std::numeric_limits<double>::min();
    }
    for (size_t t = 0; t < dist.size(); ++t) {
      if (dist[t] >= config.graph_epsilon) continue;
      const double w = std::exp(-std::max(0.0, dist[t] - rho) / s);
      if (!(w > 0.0)) continue;
      const int j = knn[i][t];
      auto& slot = directed[{std::min(i, j), std::max(i, j)}];
      (i < j ? slot.first : slot.second) = w;
    }
  }

  FuzzyGraph graph;
  graph.n_points = n;
  graph.k_neighbors = config.k_neighbors;
  graph.graph_epsilon = config.graph_epsilon;
  for (const auto& [key, w] : directed) {
    const double sym = w.first + w.second - w.first * w.second;
    graph.edges.push_back({key.first, key.second, std::min(sym, 1.0)});
  }
  return graph;
}

double HyperboloidEmbedding::z(int i) const {
  return std::sqrt(1.0 + x[i] * x[i] + y[i] * y[i]);
}

double HyperbolicDistance(const HyperboloidEmbedding& e, int i, int j) {
  return ArccoshClamped(Lorentz(e.x[i], e.y[i], e.x[j], e.y[j]));
}

double LayoutObjective(const FuzzyGraph& graph, const HyperboloidEmbedding& e) {
  const int n = e.size();
  double total = 0.0;
  size_t edge = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double w = 0.0;
      while (edge < graph.edges.size() &&
             std::tie(graph.edges[edge].i, graph.edges[edge].j) <
                 std::tie(i, j)) {
        ++edge;
      }
      if (edge < graph.edges.size() && graph.edges[edge].i == i &&
          graph.edges[edge].j == j) {
        w = graph.edges[edge].weight;
      }
      total += PairLoss(w, HyperbolicDistance(e, i, j));
    }
  }
  return total;
}

HyperboloidEmbedding Embed(const FuzzyGraph& graph, const EmbedConfig& config) {
  config.Validate();
  const int n = graph.n_points;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> init(-config.init_radius,
                                              config.init_radius);
  HyperboloidEmbedding current;
  current.x.resize(n);
  current.y.resize(n);
  for (int i = 0; i < n; ++i) {
    current.x[i] = init(rng);
    current.y[i] = init(rng);
  }

  const auto objective = [&](const HyperboloidEmbedding& e) {
    const double v = LayoutObjective(graph, e);
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("layout objective is not finite ({})", v));
    }
    return v;
  };
  double best_value = objective(current);
  HyperboloidEmbedding best = current;
  best.initial_objective = best_value;

  std::uniform_int_distribution<int> pick(0, std::max(0, n - 1));
  for (int it = 0; it < config.iterations; ++it) {
    const double lr = config.learning_rate *
                      (1.0 - static_cast<double>(it) / config.iterations);
    for (const GraphEdge& edge : graph.edges) {
      const int head = it % 2 == 0 ? edge.i : edge.j;
      const int tail = it % 2 == 0 ? edge.j : edge.i;
      // Pull: d/dB of ln(1 + d^2).
      const double d = HyperbolicDistance(current, head, tail);
      const double pull = edge.weight * 2.0 / (1.0 + d * d) * DOverSinh(d);
      ApplyPairGradient(current.x, current.y, head, tail, pull, lr, true);
      // Push: d/dB of -ln(1 - q) = ln(1 + d^2) - ln(d^2).
      for (int s = 0; s < config.negative_samples; ++s) {
        const int other = pick(rng);
        if (other == head) continue;
        const double dn =
            std::max(HyperbolicDistance(current, head, other), 1e-3);
        const double push =
            -edge.weight * 2.0 / (dn * (1.0 + dn * dn) * std::sinh(dn));
        ApplyPairGradient(current.x, current.y, head, other, push, lr, false);
      }
    }
    const bool last = it + 1 == config.iterations;
    if ((it + 1) % config.objective_interval == 0 || last) {
      const double v = objective(current);
      spdlog::debug("layout iteration {} objective {:.6f}", it + 1, v);
      if (v < best_value) {
        best_value = v;
        best.x = current.x;
        best.y = current.y;
      }
    }
  }
  best.final_objective = best_value;
  return best;
}

PoincarePoints ToPoincare(const HyperboloidEmbedding& embedding) {
  PoincarePoints p;
  const int n = embedding.size();
  p.u.resize(n);
  p.v.resize(n);
  for (int i = 0; i < n; ++i) {
    const double denom = 1.0 + embedding.z(i);
    p.u[i] = embedding.x[i] / denom;
    p.v[i] = embedding.y[i] / denom;
  }
  return p;
}

Matrix DiskMatrix(const PoincarePoints& points) {
  Matrix m(points.size(), 2);
  for (int i = 0; i < points.size(); ++i) {
    m(i, 0) = points.u[i];
    m(i, 1) = points.v[i];
  }
  return m;
}

KMeansResult KMeans(const Matrix& points, int k, int restarts,
                    std::uint64_t seed, ClusterDistance distance) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (k > points.rows()) {
    throw InvalidArgument(
        fmt::format("k = {} exceeds {} points", k, points.rows()));
  }
  if (restarts < 1) throw InvalidArgument("restarts must be >= 1");
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    KMeansResult run =
        Lloyd(points, SeedPlusPlus(points, k, rng, distance), distance);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

double Bic(const Matrix& points, const KMeansResult& result) {
  const double r = static_cast<double>(points.rows());
  const double m = static_cast<double>(points.cols());
  const int k = static_cast<int>(result.centroids.rows());
  double variance = r > k ? result.inertia / (m * (r - k)) : 0.0;
  variance = std::max(variance, kMinVariance);
  std::vector<int> counts(k, 0);
  for (int a : result.assignments) ++counts[a];
  double ll = 0.0;
  for (int c : counts) {
    if (c > 0) ll += c * std::log(c / r);
  }
  ll -= 0.5 * r * m * std::log(2.0 * M_PI * variance);
  ll -= result.inertia / (2.0 * variance);
  const double params = k * (m + 1.0);
  return -2.0 * ll + params * std::log(r);
}

ClusterModel Cluster(const Matrix& points, const ClusterConfig& config) {
  config.Validate();
  if (config.k_max > points.rows()) {
    throw InvalidArgument(fmt::format("k_max = {} exceeds {} points",
                                      config.k_max, points.rows()));
  }
  ClusterModel model;
  double best = std::numeric_limits<double>::infinity();
  for (int k = config.k_min; k <= config.k_max; ++k) {
    const std::uint64_t seed =
        config.seed * 1000003ULL + static_cast<std::uint64_t>(k);
    KMeansResult result =
        KMeans(points, k, config.restarts, seed, config.distance);
    const double bic = Bic(points, result);
    spdlog::debug("k = {} inertia {:.6g} bic {:.6f}", k, result.inertia, bic);
    model.ks.push_back(k);
    model.bic.push_back(bic);
    if (bic < best) {
      best = bic;
      model.chosen_k = k;
      model.result = std::move(result);
    }
  }
  return model;
}

TfidfMatrix Tfidf(const std::vector<std::vector<int>>& documents,
                  std::vector<std::string> terms) {
  if (documents.empty())
    throw InvalidArgument("tf-idf needs at least one document");
  const int n_terms = static_cast<int>(terms.size());
  const int n_docs = static_cast<int>(documents.size());
  Matrix freq = Matrix::Zero(n_docs, n_terms);
  for (int d = 0; d < n_docs; ++d) {
    for (int t : documents[d]) {
      if (t < 0 || t >= n_terms)
        throw InvalidArgument("term index out of range");
      freq(d, t) += 1.0;
    }
  }
  std::vector<int> df(n_terms, 0);
  for (int t = 0; t < n_terms; ++t) {
    for (int d = 0; d < n_docs; ++d) df[t] += freq(d, t) > 0.0 ? 1 : 0;
  }
  TfidfMatrix out;
  out.terms = std::move(terms);
  out.scores = Matrix::Zero(n_docs, n_terms);
  for (int d = 0; d < n_docs; ++d) {
    const double peak = n_terms > 0 ? freq.row(d).maxCoeff() : 0.0;
    if (peak <= 0.0) continue;
    for (int t = 0; t < n_terms; ++t) {
      if (freq(d, t) == 0.0) continue;
      const double idf =
          std::log10(static_cast<double>(n_docs) / (df[t] + 1)) + 1.0;
      out.scores(d, t) = freq(d, t) / peak * idf;
    }
  }
  return out;
}

std::vector<LinkageRow> CompleteLinkage(const Matrix& points) {
  const int n = static_cast<int>(points.rows());
  std::vector<LinkageRow> rows;
  if (n < 2) return rows;
  // Slots hold active clusters; dist is indexed by slot.
  std::vector<int> node(n);
  std::vector<int> size(n, 1);
  std::vector<bool> active(n, true);
  std::iota(node.begin(), node.end(), 0);
  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      dist(i, j) = (points.row(i) - points.row(j)).norm();
  }
  for (int step = 0; step < n - 1; ++step) {
    int bi = -1;
    int bj = -1;
    auto key = std::make_tuple(std::numeric_limits<double>::infinity(), 0, 0);
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const auto cand = std::make_tuple(
            dist(i, j), std::min(node[i], node[j]), std::max(node[i], node[j]));
        if (bi < 0 || cand < key) {
          key = cand;
          bi = i;
          bj = j;
        }
      }
    }
    rows.push_back({std::get<1>(key), std::get<2>(key), std::get<0>(key),
                    size[bi] + size[bj]});
    for (int t = 0; t < n; ++t) {
      if (!active[t] || t == bi || t == bj) continue;
      const double d = std::max(dist(bi, t), dist(bj, t));
      dist(bi, t) = d;
      dist(t, bi) = d;
    }
    node[bi] = n + step;
    size[bi] += size[bj];
    active[bj] = false;
  }
  return rows;
}

CooccurrenceMatrix Cooccurrence(std::span<const HospitalizationRecord> records,
                                std::span<const MedicationSet> sets,
                                const Vocabularies& vocab) {
  if (records.size() != sets.size()) {
    throw ShapeError("records and medication sets are not aligned");
  }
  const int nm = vocab.n_medications();
  const int np = vocab.n_procedures();
  CooccurrenceMatrix out;
  out.drug_drug = CountMatrix::Zero(nm, nm);
  out.drug_procedure = CountMatrix::Zero(nm, np);
  for (size_t r = 0; r < records.size(); ++r) {
    if (sets[r].size() != nm)
      throw ShapeError("medication set length mismatch");
    const std::vector<int> meds = sets[r].Indices();
    std::vector<int> procs = records[r].procedures;
    std::sort(procs.begin(), procs.end());
    procs.erase(std::unique(procs.begin(), procs.end()), procs.end());
    for (int m : meds) {
      for (int p : procs) ++out.drug_procedure(m, p);
    }
    for (size_t a = 0; a < meds.size(); ++a) {
      for (size_t b = a + 1; b < meds.size(); ++b) {
        ++out.drug_drug(meds[a], meds[b]);
        ++out.drug_drug(meds[b], meds[a]);
      }
    }
  }
  return out;
}

AnalysisBundle RunAnalysis(const Cohort& cohort,
                           std::span<const MedicationSet> sets,
                           const AnalysisConfig& config) {
  if (cohort.records.size() != sets.size()) {
    throw ShapeError(fmt::format("{} medication sets for {} records",
                                 sets.size(), cohort.records.size()));
  }
  if (sets.size() < 2)
    throw InvalidArgument("analysis needs at least 2 records");
  const Vocabularies& vocab = cohort.vocab;
  AnalysisBundle b;
  b.vocab = vocab;
  b.top_terms = config.top_terms;
  b.sets.assign(sets.begin(), sets.end());
  for (const auto& r : cohort.records) b.event_ids.push_back(r.event_id);

  b.graph = BuildGraph(b.sets, config.graph);
  b.embedding = Embed(b.graph, config.embed);
  b.disk = ToPoincare(b.embedding);

  ClusterConfig cc = config.cluster;
  const int n = static_cast<int>(b.sets.size());
  cc.k_max = std::min(cc.k_max, n);
  cc.k_min = std::min(cc.k_min, cc.k_max);
  b.clusters = Cluster(DiskMatrix(b.disk), cc);

  // Term space: medications, procedures, diagnoses, lab codes.
  std::vector<std::string> terms;
  for (const auto* labels : {&vocab.medications, &vocab.procedures,
                             &vocab.diagnoses, &vocab.lab_codes}) {
    terms.insert(terms.end(), labels->begin(), labels->end());
  }
  const int off_p = vocab.n_medications();
  const int off_d = off_p + vocab.n_procedures();
  const int off_l = off_d + vocab.n_diagnoses();
  std::vector<std::vector<int>> documents(b.clusters.chosen_k);
  for (int i = 0; i < n; ++i) {
    auto& doc = documents[b.clusters.result.assignments[i]];
    const auto& r = cohort.records[i];
    for (int m : b.sets[i].Indices()) doc.push_back(m);
    for (int p : r.procedures) doc.push_back(off_p + p);
    for (int d : r.diagnoses) doc.push_back(off_d + d);
    for (const auto& lab : r.lab_events) doc.push_back(off_l + lab.code);
  }
  b.tfidf = Tfidf(documents, std::move(terms));

  // Dendrogram over terms that score anywhere, described by their per-cluster
  // score vectors.
  for (int t = 0; t < b.tfidf.scores.cols(); ++t) {
    if (b.tfidf.scores.col(t).maxCoeff() > 0.0) b.linkage_terms.push_back(t);
  }
  Matrix term_points(b.linkage_terms.size(), b.tfidf.scores.rows());
  for (size_t i = 0; i < b.linkage_terms.size(); ++i) {
    term_points.row(i) = b.tfidf.scores.col(b.linkage_terms[i]).transpose();
  }
  b.linkage = CompleteLinkage(term_points);
  b.cooccurrence = Cooccurrence(cohort.records, b.sets, vocab);
  return b;
}

}  // namespace medcf
