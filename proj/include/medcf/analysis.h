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

// Interpretation of predicted medication sets.
//
// The sets are joined into a fuzzy neighbor graph under cosine distance,
// laid out on the two-dimensional hyperboloid by minimizing the cross-entropy
// between graph weights and low-dimensional affinities, projected onto the
// Poincare disk and clustered with K-means (cluster count chosen by BIC).
// Each cluster becomes a document of codes for TF-IDF scoring; terms are
// arranged in a complete-linkage dendrogram; co-occurrence counts are
// tabulated alongside.

#ifndef MEDCF_ANALYSIS_H_
#define MEDCF_ANALYSIS_H_

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "medcf/autodiff.h"
#include "medcf/cohort.h"

namespace medcf {

struct GraphConfig {
  int k_neighbors = 15;
  // Pairs at cosine distance >= graph_epsilon are never joined.
  double graph_epsilon = 1.0;

  void Validate() const;
};

struct GraphEdge {
  int i = 0;  // i < j
  int j = 0;
  double weight = 0.0;  // in (0, 1]
};

struct FuzzyGraph {
  int n_points = 0;
  std::vector<GraphEdge> edges;  // sorted by (i, j)
  int k_neighbors = 0;
  double graph_epsilon = 0.0;
};

// Cosine distance 1 - cos(a, b); empty sets are at distance 1 from all.
double CosineDistance(const MedicationSet& a, const MedicationSet& b);

// For every point, its min(k, n - 1) nearest other points ordered by
// (distance, index).
std::vector<std::vector<int>> NearestNeighbors(
    std::span<const MedicationSet> vectors, int k);

// Directed edges i -> j for the k nearest neighbors with weight
// exp(-max(0, d - rho_i) / s_i), rho_i the nearest-neighbor distance and s_i
// chosen by bisection so the weights of the k neighbors sum to log2(k).
// Directed weights are merged as w_ij + w_ji - w_ij * w_ji.
FuzzyGraph BuildGraph(std::span<const MedicationSet> vectors,
                      const GraphConfig& config);

struct EmbedConfig {
  int iterations = 200;
  int negative_samples = 5;
  double learning_rate = 1.0;   // decays linearly to 0
  double init_radius = 0.5;     // initial (x, y) uniform in [-r, r]^2
  int objective_interval = 10;  // full objective every N iterations
  std::uint64_t seed = 0;

  void Validate() const;
};

// Points on the hyperboloid z^2 - x^2 - y^2 = 1, z > 0, parameterized by
// (x, y).
struct HyperboloidEmbedding {
  std::vector<double> x;
  std::vector<double> y;
  double initial_objective = 0.0;
  double final_objective = 0.0;

  int size() const { return static_cast<int>(x.size()); }
  double z(int i) const;
};

// arccosh of the Lorentz product, argument clamped below at 1 + 1e-12.
double HyperbolicDistance(const HyperboloidEmbedding& e, int i, int j);

// Cross-entropy between graph weights w and q = 1 / (1 + d^2) over all
// unordered pairs: -w ln q - (1 - w) ln(1 - q).
double LayoutObjective(const FuzzyGraph& graph, const HyperboloidEmbedding& e);

// Stochastic gradient descent on (x, y). Each positive edge pulls both ends
// together; each of its negative samples pushes only the edge's head point.
// The returned layout is the best one seen, so its objective never exceeds
// the initial one. Throws NumericError on a non-finite objective.
HyperboloidEmbedding Embed(const FuzzyGraph& graph, const EmbedConfig& config);

struct PoincarePoints {
  std::vector<double> u;
  std::vector<double> v;

  int size() const { return static_cast<int>(u.size()); }
};

// (x, y) / (1 + z).
PoincarePoints ToPoincare(const HyperboloidEmbedding& embedding);

enum class ClusterDistance { kEuclidean, kHyperbolic };

struct KMeansResult {
  Matrix centroids;  // k x d
  std::vector<int> assignments;
  double inertia = 0.0;  // sum of squared distances
};

// k-means++ seeding and Lloyd iterations until no centroid moves more than
// 1e-6; the best of `restarts` runs by inertia. Empty clusters are reseeded
// at the point farthest from its centroid.
KMeansResult KMeans(const Matrix& points, int k, int restarts,
                    std::uint64_t seed,
                    ClusterDistance distance = ClusterDistance::kEuclidean);

// Spherical-Gaussian BIC, lower is better.
double Bic(const Matrix& points, const KMeansResult& result);

struct ClusterConfig {
  int k_min = 2;
  int k_max = 12;
  int restarts = 50;
  ClusterDistance distance = ClusterDistance::kEuclidean;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct ClusterModel {
  int chosen_k = 0;
  std::vector<int> ks;
  std::vector<double> bic;
  KMeansResult result;  // for chosen_k
};

// Scans k_min..k_max and keeps the BIC minimum, ties to the smaller k.
// Throws InvalidArgument when k_max exceeds the number of points.
ClusterModel Cluster(const Matrix& points, const ClusterConfig& config);

// Disk coordinates as an n x 2 matrix.
Matrix DiskMatrix(const PoincarePoints& points);

struct TfidfMatrix {
  std::vector<std::string> terms;
  Matrix scores;  // documents x terms
};

// score(t, d) = f_td / max_t' f_t'd * (log10(|D| / (df_t + 1)) + 1).
// Documents are multisets of term indices.
TfidfMatrix Tfidf(const std::vector<std::vector<int>>& documents,
                  std::vector<std::string> terms);

// Merge of nodes `left` < `right`. Leaves are 0..n-1 and the node created by
// merge i is n + i.
struct LinkageRow {
  int left = 0;
  int right = 0;
  double height = 0.0;
  int size = 0;

  bool operator==(const LinkageRow&) const = default;
};

// Complete-linkage agglomeration of the rows of `points` under Euclidean
// distance. Equal distances merge the lexicographically smaller node pair.
std::vector<LinkageRow> CompleteLinkage(const Matrix& points);

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic,
                                  Eigen::RowMajor>;

struct CooccurrenceMatrix {
  CountMatrix drug_drug;       // n_medications x n_medications, symmetric
  CountMatrix drug_procedure;  // n_medications x n_procedures
};

// Per record: every distinct (procedure, medication) pair and every
// unordered medication pair counts once.
CooccurrenceMatrix Cooccurrence(std::span<const HospitalizationRecord> records,
                                std::span<const MedicationSet> sets,
                                const Vocabularies& vocab);

struct AnalysisConfig {
  GraphConfig graph;
  EmbedConfig embed;
  ClusterConfig cluster;
  int top_terms = 10;
};

struct AnalysisBundle {
  Vocabularies vocab;
  std::vector<std::int64_t> event_ids;
  std::vector<MedicationSet> sets;
  FuzzyGraph graph;
  HyperboloidEmbedding embedding;
  PoincarePoints disk;
  ClusterModel clusters;
  TfidfMatrix tfidf;               // clusters x terms
  std::vector<int> linkage_terms;  // term index of each dendrogram leaf
  std::vector<LinkageRow> linkage;
  CooccurrenceMatrix cooccurrence;
  int top_terms = 10;

  bool empty() const { return sets.empty(); }
};

// The full pipeline over `sets`, one per record of `cohort`. The cluster
// range is clipped to the number of points.
AnalysisBundle RunAnalysis(const Cohort& cohort,
                           std::span<const MedicationSet> sets,
                           const AnalysisConfig& config);

// Names of the files EmitReport writes, in order.
const std::vector<std::string>& ReportFileNames();

// Writes every report file into `out_dir` (created if missing). Throws
// InvalidArgument for an empty bundle and IoError when a file cannot be
// written.
void EmitReport(const AnalysisBundle& bundle,
                const std::filesystem::path& out_dir);

}  // namespace medcf

#endif  // MEDCF_ANALYSIS_H_
