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

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass as a node holding its
// value and a closure that propagates the node's gradient to its inputs.
// Nodes are appended in topological order, so Backward() walks them once in
// reverse creation order.

#ifndef MEDCF_AUTODIFF_H_
#define MEDCF_AUTODIFF_H_

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace medcf {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

class Tape {
 public:
  using NodeId = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf whose gradient is collected; `slot` identifies it to the caller.
  NodeId Variable(const Matrix& value, int slot);
  // Leaf that never receives a gradient.
  NodeId Constant(const Matrix& value);

  NodeId MatMul(NodeId a, NodeId b);
  NodeId Add(NodeId a, NodeId b);
  // a + broadcast of the 1 x cols matrix `row` over every row of a.
  NodeId AddRowBroadcast(NodeId a, NodeId row);
  // a + broadcast of row `index` of `table` over every row of a.
  NodeId AddTableRow(NodeId a, NodeId table, int index);
  NodeId Scale(NodeId a, double factor);
  NodeId Relu(NodeId a);
  NodeId Sigmoid(NodeId a);
  // Row-wise layer normalization with 1 x cols gain and bias.
  NodeId LayerNorm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
  // Vertical concatenation.
  NodeId StackRows(const std::vector<NodeId>& parts);
  // Horizontal concatenation.
  NodeId ConcatCols(const std::vector<NodeId>& parts);
  NodeId SliceRows(NodeId a, int start, int count);
  // Scaled dot-product self-attention. q, k, v hold `n_tokens` groups of
  // `batch` rows each (row = token * batch + sample); tokens attend only
  // within their own sample.
  NodeId GroupAttention(NodeId q, NodeId k, NodeId v, int n_tokens,
                        int n_heads);
  // Mean binary cross-entropy of probabilities against fixed targets, with
  // probabilities clamped to [clamp, 1 - clamp]. Produces a 1x1 node.
  NodeId BceMean(NodeId probs, const Matrix& targets, double clamp = 1e-7);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Propagates `seed` * d(root) through the tape. Root must be 1x1. A tape
  // can be differentiated once; a second call throws InvalidArgument.
  void Backward(NodeId root, double seed = 1.0);
  bool consumed() const { return consumed_; }

  // Gradient accumulated at a leaf created with Variable(). Zero-filled if the
  // leaf did not influence the root.
  const Matrix& Gradient(NodeId id) const { return nodes_[id].grad; }
  // (node, slot) pairs for all Variable leaves, in creation order.
  const std::vector<std::pair<NodeId, int>>& variables() const {
    return variables_;
  }
  // Number of nodes whose backward closure ran in the last Backward().
  int visited() const { return visited_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, NodeId)> backward;
  };

  NodeId Push(Matrix value, std::function<void(Tape&, NodeId)> backward);
  Matrix& GradOf(NodeId id);

  std::vector<Node> nodes_;
  std::vector<std::pair<NodeId, int>> variables_;
  bool consumed_ = false;
  int visited_ = 0;
};

}  // namespace medcf

#endif  // MEDCF_AUTODIFF_H_
