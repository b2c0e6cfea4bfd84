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

#include "medcf/autodiff.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "medcf/error.h"

namespace medcf {

namespace {

void RequireSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

Tape::NodeId Tape::Push(Matrix value,
                        std::function<void(Tape&, NodeId)> backward) {
  if (consumed_) throw InvalidArgument("tape already differentiated");
  nodes_.push_back({std::move(value), Matrix(), std::move(backward)});
  return static_cast<NodeId>(nodes_.size() - 1);
}

Matrix& Tape::GradOf(NodeId id) {
  Node& node = nodes_[id];
  if (node.grad.size() == 0) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

Tape::NodeId Tape::Variable(const Matrix& value, int slot) {
  const NodeId id = Push(value, nullptr);
  variables_.emplace_back(id, slot);
  return id;
}

Tape::NodeId Tape::Constant(const Matrix& value) {
  return Push(value, nullptr);
}

Tape::NodeId Tape::MatMul(NodeId a, NodeId b) {
  if (value(a).cols() != value(b).rows()) {
    throw ShapeError("MatMul: inner dimensions " +
                     std::to_string(value(a).cols()) + " vs " +
                     std::to_string(value(b).rows()));
  }
  Matrix out = value(a) * value(b);
  return Push(std::move(out), [a, b](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    t.GradOf(a).noalias() += g * t.value(b).transpose();
    t.GradOf(b).noalias() += t.value(a).transpose() * g;
  });
}

Tape::NodeId Tape::Add(NodeId a, NodeId b) {
  RequireSameShape(value(a), value(b), "Add");
  Matrix out = value(a) + value(b);
  return Push(std::move(out), [a, b](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    t.GradOf(a) += g;
    t.GradOf(b) += g;
  });
}

Tape::NodeId Tape::AddRowBroadcast(NodeId a, NodeId row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
    throw ShapeError("AddRowBroadcast: bias shape mismatch");
  }
  Matrix out = value(a).rowwise() + RowVector(value(row));
  return Push(std::move(out), [a, row](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    t.GradOf(a) += g;
    t.GradOf(row) += g.colwise().sum();
  });
}

Tape::NodeId Tape::AddTableRow(NodeId a, NodeId table, int index) {
  if (index < 0 || index >= value(table).rows() ||
      value(table).cols() != value(a).cols()) {
    throw ShapeError("AddTableRow: table shape mismatch");
  }
  Matrix out = value(a).rowwise() + RowVector(value(table).row(index));
  return Push(std::move(out), [a, table, index](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    t.GradOf(a) += g;
    t.GradOf(table).row(index) += g.colwise().sum();
  });
}

Tape::NodeId Tape::Scale(NodeId a, double factor) {
  Matrix out = value(a) * factor;
  return Push(std::move(out), [a, factor](Tape& t, NodeId self) {
    t.GradOf(a) += t.nodes_[self].grad * factor;
  });
}

Tape::NodeId Tape::Relu(NodeId a) {
  Matrix out = value(a).cwiseMax(0.0);
  return Push(std::move(out), [a](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    t.GradOf(a) +=
        (t.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(g);
  });
}

Tape::NodeId Tape::Sigmoid(NodeId a) {
  Matrix out = value(a).unaryExpr([](double z) {
    // Stable in both tails.
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
  return Push(std::move(out), [a](Tape& t, NodeId self) {
    const Matrix& p = t.nodes_[self].value;
    const Matrix& g = t.nodes_[self].grad;
    t.GradOf(a).array() += g.array() * p.array() * (1.0 - p.array());
  });
}

Tape::NodeId Tape::LayerNorm(NodeId x, NodeId gain, NodeId bias, double eps) {
  const Matrix& in = value(x);
  const Eigen::Index n = in.cols();
  if (value(gain).rows() != 1 || value(gain).cols() != n ||
      value(bias).rows() != 1 || value(bias).cols() != n) {
    throw ShapeError("LayerNorm: gain/bias shape mismatch");
  }
  Matrix normalized(in.rows(), n);
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (in.row(r).array() - mean) * inv_std(r);
  }
  Matrix out =
      (normalized.array().rowwise() * RowVector(value(gain)).array()).matrix();
  out.rowwise() += RowVector(value(bias));
  return Push(std::move(out),
              [x, gain, bias, normalized, inv_std](Tape& t, NodeId self) {
                const Matrix& g = t.nodes_[self].grad;
                t.GradOf(gain) += (g.cwiseProduct(normalized)).colwise().sum();
                t.GradOf(bias) += g.colwise().sum();
                const RowVector gamma = t.value(gain);
                Matrix& gx = t.GradOf(x);
                const double n = static_cast<double>(normalized.cols());
                for (Eigen::Index r = 0; r < g.rows(); ++r) {
                  const RowVector dxhat = g.row(r).cwiseProduct(gamma);
                  const double sum_d = dxhat.sum();
                  const double sum_dx = dxhat.dot(normalized.row(r));
                  gx.row(r).array() +=
                      (inv_std(r) / n) * (n * dxhat.array() - sum_d -
                                          normalized.row(r).array() * sum_dx);
                }
              });
}

Tape::NodeId Tape::StackRows(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeError("StackRows: no inputs");
  const Eigen::Index cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (NodeId p : parts) {
    if (value(p).cols() != cols) throw ShapeError("StackRows: column mismatch");
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (NodeId p : parts) {
    out.middleRows(offset, value(p).rows()) = value(p);
    offset += value(p).rows();
  }
  return Push(std::move(out), [parts](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index off = 0;
    for (NodeId p : parts) {
      const Eigen::Index r = t.value(p).rows();
      t.GradOf(p) += g.middleRows(off, r);
      off += r;
    }
  });
}

Tape::NodeId Tape::ConcatCols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeError("ConcatCols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (NodeId p : parts) {
    if (value(p).rows() != rows) throw ShapeError("ConcatCols: row mismatch");
    cols += value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (NodeId p : parts) {
    out.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
  }
  return Push(std::move(out), [parts](Tape& t, NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    Eigen::Index off = 0;
    for (NodeId p : parts) {
      const Eigen::Index c = t.value(p).cols();
      t.GradOf(p) += g.middleCols(off, c);
      off += c;
    }
  });
}

Tape::NodeId Tape::SliceRows(NodeId a, int start, int count) {
  if (start < 0 || count < 0 || start + count > value(a).rows()) {
    throw ShapeError("SliceRows: range out of bounds");
  }
  Matrix out = value(a).middleRows(start, count);
  return Push(std::move(out), [a, start, count](Tape& t, NodeId self) {
    t.GradOf(a).middleRows(start, count) += t.nodes_[self].grad;
  });
}

Tape::NodeId Tape::GroupAttention(NodeId q, NodeId k, NodeId v, int n_tokens,
                                  int n_heads) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  RequireSameShape(Q, K, "GroupAttention");
  RequireSameShape(Q, V, "GroupAttention");
  if (n_tokens < 1 || Q.rows() % n_tokens != 0 || n_heads < 1 ||
      Q.cols() % n_heads != 0) {
    throw ShapeError("GroupAttention: rows or cols not divisible");
  }
  const int batch = static_cast<int>(Q.rows()) / n_tokens;
  const int dh = static_cast<int>(Q.cols()) / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // weights[(s * n_heads + h) * T * T + i * T + j]
  const int tt = n_tokens * n_tokens;
  std::vector<double> weights(static_cast<size_t>(batch) * n_heads * tt);
  Matrix out = Matrix::Zero(Q.rows(), Q.cols());
  std::vector<double> row(n_tokens);
  for (int s = 0; s < batch; ++s) {
    for (int h = 0; h < n_heads; ++h) {
      double* w = &weights[(static_cast<size_t>(s) * n_heads + h) * tt];
      for (int i = 0; i < n_tokens; ++i) {
        const auto qi = Q.row(i * batch + s).segment(h * dh, dh);
        double max_score = -INFINITY;
        for (int j = 0; j < n_tokens; ++j) {
          row[j] = qi.dot(K.row(j * batch + s).segment(h * dh, dh)) * scale;
          max_score = std::max(max_score, row[j]);
        }
        double total = 0.0;
        for (int j = 0; j < n_tokens; ++j) {
          row[j] = std::exp(row[j] - max_score);
          total += row[j];
        }
        auto oi = out.row(i * batch + s).segment(h * dh, dh);
        for (int j = 0; j < n_tokens; ++j) {
          w[i * n_tokens + j] = row[j] / total;
          oi += w[i * n_tokens + j] * V.row(j * batch + s).segment(h * dh, dh);
        }
      }
    }
  }

  return Push(std::move(out), [q, k, v, n_tokens, n_heads, batch, dh, scale,
                               weights = std::move(weights)](Tape& t,
                                                             NodeId self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& Qv = t.value(q);
    const Matrix& Kv = t.value(k);
    const Matrix& Vv = t.value(v);
    Matrix& gq = t.GradOf(q);
    Matrix& gk = t.GradOf(k);
    Matrix& gv = t.GradOf(v);
    const int tt = n_tokens * n_tokens;
    std::vector<double> dw(tt);
    for (int s = 0; s < batch; ++s) {
      for (int h = 0; h < n_heads; ++h) {
        const double* w = &weights[(static_cast<size_t>(s) * n_heads + h) * tt];
        for (int i = 0; i < n_tokens; ++i) {
          const auto gi = g.row(i * batch + s).segment(h * dh, dh);
          double weighted = 0.0;
          for (int j = 0; j < n_tokens; ++j) {
            gv.row(j * batch + s).segment(h * dh, dh) +=
                w[i * n_tokens + j] * gi;
            dw[i * n_tokens + j] =
                gi.dot(Vv.row(j * batch + s).segment(h * dh, dh));
            weighted += w[i * n_tokens + j] * dw[i * n_tokens + j];
          }
          for (int j = 0; j < n_tokens; ++j) {
            const double ds =
                w[i * n_tokens + j] * (dw[i * n_tokens + j] - weighted) * scale;
            gq.row(i * batch + s).segment(h * dh, dh) +=
                ds * Kv.row(j * batch + s).segment(h * dh, dh);
            gk.row(j * batch + s).segment(h * dh, dh) +=
                ds * Qv.row(i * batch + s).segment(h * dh, dh);
          }
        }
      }
    }
  });
}

Tape::NodeId Tape::BceMean(NodeId probs, const Matrix& targets, double clamp) {
  const Matrix& p = value(probs);
  RequireSameShape(p, targets, "BceMean");
  if (p.size() == 0) throw ShapeError("BceMean: empty input");
  const double count = static_cast<double>(p.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double pc = std::clamp(p(i, j), clamp, 1.0 - clamp);
      const double y = targets(i, j);
      total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total / count;
  return Push(
      std::move(out), [probs, targets, clamp, count](Tape& t, NodeId self) {
        const double g = t.nodes_[self].grad(0, 0);
        const Matrix& pv = t.value(probs);
        Matrix& gp = t.GradOf(probs);
        for (Eigen::Index i = 0; i < pv.rows(); ++i) {
          for (Eigen::Index j = 0; j < pv.cols(); ++j) {
            const double pij = pv(i, j);
            if (pij < clamp || pij > 1.0 - clamp) continue;
            const double y = targets(i, j);
            gp(i, j) += g * (-y / pij + (1.0 - y) / (1.0 - pij)) / count;
          }
        }
      });
}

void Tape::Backward(NodeId root, double seed) {
  if (consumed_) throw InvalidArgument("tape already consumed by Backward()");
  if (root < 0 || root >= size()) throw InvalidArgument("unknown root node");
  if (value(root).size() != 1) throw ShapeError("Backward root must be scalar");
  consumed_ = true;
  visited_ = 0;
  GradOf(root)(0, 0) = seed;
  for (NodeId id = root; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0 || !node.backward) continue;
    node.backward(*this, id);
    ++visited_;
  }
  for (const auto& [id, slot] : variables_) GradOf(id);
}

}  // namespace medcf
