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

// CSV and SVG output of an analysis bundle.

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "medcf/analysis.h"
#include "medcf/error.h"

namespace medcf {
namespace {

// Ten-color categorical palette.
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                    "#bcbd22", "#17becf"};

std::string Num(double v) { return fmt::format("{:.17g}", v); }

std::string EmbeddingCsv(const AnalysisBundle& b) {
  std::string out = "event_id,x,y,z,u,v,cluster\n";
  for (int i = 0; i < b.embedding.size(); ++i) {
    out += fmt::format("{},{},{},{},{},{},{}\n", b.event_ids[i],
                       Num(b.embedding.x[i]), Num(b.embedding.y[i]),
                       Num(b.embedding.z(i)), Num(b.disk.u[i]),
                       Num(b.disk.v[i]), b.clusters.result.assignments[i]);
  }
  return out;
}

std::string BicCsv(const AnalysisBundle& b) {
  std::string out = "k,bic,chosen\n";
  for (size_t i = 0; i < b.clusters.ks.size(); ++i) {
    out += fmt::format("{},{},{}\n", b.clusters.ks[i], Num(b.clusters.bic[i]),
                       b.clusters.ks[i] == b.clusters.chosen_k ? 1 : 0);
  }
  return out;
}

std::string TopTermsCsv(const AnalysisBundle& b) {
  std::string out = "cluster,rank,term,score\n";
  const Matrix& s = b.tfidf.scores;
  for (int c = 0; c < s.rows(); ++c) {
    std::vector<int> order;
    for (int t = 0; t < s.cols(); ++t) {
      if (s(c, t) > 0.0) order.push_back(t);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int z) { return s(c, a) > s(c, z); });
    const int keep = std::min<int>(b.top_terms, order.size());
    for (int r = 0; r < keep; ++r) {
      out += fmt::format("{},{},{},{}\n", c, r + 1, b.tfidf.terms[order[r]],
                         Num(s(c, order[r])));
    }
  }
  return out;
}

std::string LinkageCsv(const AnalysisBundle& b) {
  const int n = static_cast<int>(b.linkage_terms.size());
  std::string out = "node,left,right,height,size,label\n";
  for (int i = 0; i < n; ++i) {
    out += fmt::format("{},,,0,1,{}\n", i, b.tfidf.terms[b.linkage_terms[i]]);
  }
  for (size_t i = 0; i < b.linkage.size(); ++i) {
    const auto& row = b.linkage[i];
    out += fmt::format("{},{},{},{},{},\n", n + i, row.left, row.right,
                       Num(row.height), row.size);
  }
  return out;
}

std::string CountCsv(const CountMatrix& m, const std::vector<std::string>& rows,
                     const std::vector<std::string>& cols) {
  std::string out = "medication";
  for (const auto& c : cols) out += "," + c;
  out += "\n";
  for (int i = 0; i < m.rows(); ++i) {
    out += rows[i];
    for (int j = 0; j < m.cols(); ++j) out += fmt::format(",{}", m(i, j));
    out += "\n";
  }
  return out;
}

std::string PoincareSvg(const AnalysisBundle& b) {
  constexpr double kSize = 640.0;
  constexpr double kRadius = 300.0;
  const double c = kSize / 2.0;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" "
      "viewBox=\"0 0 {0} {0}\">\n"
      "<rect width=\"{0}\" height=\"{0}\" fill=\"white\"/>\n"
      "<circle cx=\"{1}\" cy=\"{1}\" r=\"{2}\" fill=\"none\" "
      "stroke=\"black\"/>\n",
      kSize, c, kRadius);
  for (int i = 0; i < b.disk.size(); ++i) {
    const int k = b.clusters.result.assignments[i];
    out += fmt::format(
        "<circle cx=\"{:.3f}\" cy=\"{:.3f}\" r=\"2.5\" fill=\"{}\" "
        "fill-opacity=\"0.7\"/>\n",
        c + kRadius * b.disk.u[i], c - kRadius * b.disk.v[i], kPalette[k % 10]);
  }
  out += "</svg>\n";
  return out;
}

std::string DendrogramSvg(const AnalysisBundle& b) {
  const int n = static_cast<int>(b.linkage_terms.size());
  constexpr double kStep = 14.0;
  constexpr double kPlotHeight = 400.0;
  constexpr double kMargin = 40.0;
  const double width = 2 * kMargin + std::max(1, n) * kStep;
  const double height = kPlotHeight + 2 * kMargin + 60.0;
  double top = 0.0;
  for (const auto& row : b.linkage) top = std::max(top, row.height);
  if (top <= 0.0) top = 1.0;

  // Leaf order from a depth-first walk; every root is walked in turn.
  std::vector<double> x(n + b.linkage.size(), 0.0);
  std::vector<double> h(n + b.linkage.size(), 0.0);
  std::vector<bool> has_parent(n + b.linkage.size(), false);
  for (const auto& row : b.linkage) {
    has_parent[row.left] = true;
    has_parent[row.right] = true;
  }
  std::vector<int> order;
  std::function<void(int)> walk = [&](int node) {
    if (node < n) {
      order.push_back(node);
      return;
    }
    walk(b.linkage[node - n].left);
    walk(b.linkage[node - n].right);
  };
  for (int node = static_cast<int>(x.size()) - 1; node >= 0; --node) {
    if (!has_parent[node]) walk(node);
  }
  for (size_t i = 0; i < order.size(); ++i)
    x[order[i]] = kMargin + (i + 0.5) * kStep;
  for (size_t i = 0; i < b.linkage.size(); ++i) {
    const auto& row = b.linkage[i];
    x[n + i] = 0.5 * (x[row.left] + x[row.right]);
    h[n + i] = row.height;
  }
  const auto ypos = [&](double v) {
    return kMargin + kPlotHeight * (1.0 - v / top);
  };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" "
      "height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\">\n"
      "<rect width=\"{0:.0f}\" height=\"{1:.0f}\" fill=\"white\"/>\n",
      width, height);
  for (size_t i = 0; i < b.linkage.size(); ++i) {
    const auto& row = b.linkage[i];
    const double yp = ypos(row.height);
    out += fmt::format(
        "<polyline points=\"{:.3f},{:.3f} {:.3f},{:.3f} {:.3f},{:.3f} "
        "{:.3f},{:.3f}\" fill=\"none\" stroke=\"black\"/>\n",
        x[row.left], ypos(h[row.left]), x[row.left], yp, x[row.right], yp,
        x[row.right], ypos(h[row.right]));
  }
  for (int i = 0; i < n; ++i) {
    out += fmt::format(
        "<text x=\"{0:.3f}\" y=\"{1:.3f}\" font-size=\"9\" "
        "transform=\"rotate(90 {0:.3f} {1:.3f})\">{2}</text>\n",
        x[i], kMargin + kPlotHeight + 6.0, b.tfidf.terms[b.linkage_terms[i]]);
  }
  out += "</svg>\n";
  return out;
}

std::string HeatmapSvg(const CountMatrix& m,
                       const std::vector<std::string>& rows,
                       const std::vector<std::string>& cols) {
  constexpr double kCell = 14.0;
  constexpr double kLabel = 50.0;
  const double width = kLabel + m.cols() * kCell + 10.0;
  const double height = kLabel + m.rows() * kCell + 10.0;
  const double peak = m.size() > 0 ? static_cast<double>(m.maxCoeff()) : 0.0;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" "
      "height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\">\n"
      "<rect width=\"{0:.0f}\" height=\"{1:.0f}\" fill=\"white\"/>\n",
      width, height);
  for (int j = 0; j < m.cols(); ++j) {
    const double cx = kLabel + (j + 0.5) * kCell;
    out += fmt::format(
        "<text x=\"{0:.3f}\" y=\"{1:.3f}\" font-size=\"8\" "
        "transform=\"rotate(-90 {0:.3f} {1:.3f})\">{2}</text>\n",
        cx, kLabel - 4.0, cols[j]);
  }
  for (int i = 0; i < m.rows(); ++i) {
    out += fmt::format("<text x=\"2\" y=\"{:.3f}\" font-size=\"8\">{}</text>\n",
                       kLabel + (i + 0.75) * kCell, rows[i]);
    for (int j = 0; j < m.cols(); ++j) {
      const double level = peak > 0.0 ? m(i, j) / peak : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - level)));
      out += fmt::format(
          "<rect x=\"{:.3f}\" y=\"{:.3f}\" width=\"{}\" height=\"{}\" "
          "fill=\"rgb({},{},255)\"><title>{}</title></rect>\n",
          kLabel + j * kCell, kLabel + i * kCell, kCell, kCell, shade, shade,
          m(i, j));
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace

const std::vector<std::string>& ReportFileNames() {
  static const std::vector<std::string> names = {
      "embedding.csv",
      "bic.csv",
      "tfidf_top_terms.csv",
      "linkage.csv",
      "cooccurrence_drug_drug.csv",
      "cooccurrence_drug_procedure.csv",
      "poincare.svg",
      "dendrogram.svg",
      "cooccurrence_drug_drug.svg",
      "cooccurrence_drug_procedure.svg",
  };
  return names;
}

void EmitReport(const AnalysisBundle& bundle,
                const std::filesystem::path& out_dir) {
  if (bundle.empty()) throw InvalidArgument("nothing to report: empty bundle");
  const Vocabularies& v = bundle.vocab;
  const auto& cooc = bundle.cooccurrence;
  // Render everything before touching the file system.
  const std::vector<std::string> bodies = {
      EmbeddingCsv(bundle),
      BicCsv(bundle),
      TopTermsCsv(bundle),
      LinkageCsv(bundle),
      CountCsv(cooc.drug_drug, v.medications, v.medications),
      CountCsv(cooc.drug_procedure, v.medications, v.procedures),
      PoincareSvg(bundle),
      DendrogramSvg(bundle),
      HeatmapSvg(cooc.drug_drug, v.medications, v.medications),
      HeatmapSvg(cooc.drug_procedure, v.medications, v.procedures),
  };
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError(
        fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
  }
  const auto& names = ReportFileNames();
  for (size_t i = 0; i < names.size(); ++i) {
    const auto path = out_dir / names[i];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bodies[i];
    if (!out) throw IoError("cannot write " + path.string());
  }
}

}  // namespace medcf
