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

#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "medcf/error.h"

namespace medcf {
namespace {

using Builder =
    std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>;

Matrix Random(int r, int c, std::mt19937_64& rng, double lo = -1.0,
              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  }
  return m;
}

// Scalar readout u^T f(inputs) v of the built node.
double Readout(const Builder& build, const std::vector<Matrix>& inputs,
               const Matrix& u, const Matrix& v) {
  Tape tape;
  std::vector<Tape::NodeId> ids;
  for (const auto& m : inputs) ids.push_back(tape.Constant(m));
  const Tape::NodeId out = build(tape, ids);
  return (u * tape.value(out) * v)(0, 0);
}

// Compares reverse-mode gradients of the readout with central differences
// for every input coordinate.
void ExpectGradientsMatch(const Builder& build,
                          const std::vector<Matrix>& inputs,
                          std::uint64_t seed = 1, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  Tape probe;
  std::vector<Tape::NodeId> pids;
  for (const auto& m : inputs) pids.push_back(probe.Constant(m));
  const Matrix& shape = probe.value(build(probe, pids));
  const Matrix u = Random(1, shape.rows(), rng);
  const Matrix v = Random(shape.cols(), 1, rng);

  Tape tape;
  std::vector<Tape::NodeId> ids;
  for (size_t i = 0; i < inputs.size(); ++i) {
    ids.push_back(tape.Variable(inputs[i], static_cast<int>(i)));
  }
  const Tape::NodeId out = build(tape, ids);
  const Tape::NodeId ut = tape.Constant(u);
  const Tape::NodeId vt = tape.Constant(v);
  const Tape::NodeId root = tape.MatMul(tape.MatMul(ut, out), vt);
  tape.Backward(root);

  constexpr double h = 1e-6;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Matrix& g = tape.Gradient(ids[i]);
    ASSERT_EQ(g.rows(), inputs[i].rows());
    ASSERT_EQ(g.cols(), inputs[i].cols());
    for (int r = 0; r < inputs[i].rows(); ++r) {
      for (int c = 0; c < inputs[i].cols(); ++c) {
        auto plus = inputs;
        auto minus = inputs;
        plus[i](r, c) += h;
        minus[i](r, c) -= h;
        const double fd =
            (Readout(build, plus, u, v) - Readout(build, minus, u, v)) /
            (2 * h);
        EXPECT_NEAR(g(r, c), fd, tol * std::max(1.0, std::abs(fd)))
            << "input " << i << " at (" << r << "," << c << ")";
      }
    }
  }
}

TEST(AutodiffTest, MatMul) {
  std::mt19937_64 rng(1);
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.MatMul(x[0], x[1]); },
      {Random(3, 4, rng), Random(4, 2, rng)});
}

TEST(AutodiffTest, AddAndBroadcasts) {
  std::mt19937_64 rng(2);
  ExpectGradientsMatch([](Tape& t, const auto& x) { return t.Add(x[0], x[1]); },
                       {Random(3, 4, rng), Random(3, 4, rng)});
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.AddRowBroadcast(x[0], x[1]); },
      {Random(3, 4, rng), Random(1, 4, rng)});
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.AddTableRow(x[0], x[1], 2); },
      {Random(3, 4, rng), Random(4, 4, rng)});
}

TEST(AutodiffTest, ElementwiseOps) {
  std::mt19937_64 rng(3);
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.Scale(x[0], -2.5); },
      {Random(2, 3, rng)});
  ExpectGradientsMatch([](Tape& t, const auto& x) { return t.Sigmoid(x[0]); },
                       {Random(2, 3, rng, -4, 4)});
  // Keep ReLU inputs away from the kink.
  Matrix r = Random(3, 3, rng, 0.1, 1.0);
  r(0, 1) = -0.7;
  r(2, 2) = -0.3;
  ExpectGradientsMatch([](Tape& t, const auto& x) { return t.Relu(x[0]); },
                       {r});
}

TEST(AutodiffTest, LayerNorm) {
  std::mt19937_64 rng(4);
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.LayerNorm(x[0], x[1], x[2]); },
      {Random(3, 5, rng), Random(1, 5, rng, 0.5, 1.5), Random(1, 5, rng)}, 4,
      1e-5);
}

TEST(AutodiffTest, StructuralOps) {
  std::mt19937_64 rng(5);
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.StackRows({x[0], x[1], x[0]}); },
      {Random(2, 3, rng), Random(1, 3, rng)});
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.ConcatCols({x[0], x[1]}); },
      {Random(2, 3, rng), Random(2, 1, rng)});
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) { return t.SliceRows(x[0], 1, 2); },
      {Random(4, 3, rng)});
}

TEST(AutodiffTest, GroupAttention) {
  std::mt19937_64 rng(6);
  const int tokens = 4;
  const int batch = 2;
  ExpectGradientsMatch(
      [](Tape& t, const auto& x) {
        return t.GroupAttention(x[0], x[1], x[2], 4, 2);
      },
      {Random(tokens * batch, 6, rng), Random(tokens * batch, 6, rng),
       Random(tokens * batch, 6, rng)},
      6, 1e-5);
}

TEST(AutodiffTest, GroupAttentionIsolatesSamples) {
  std::mt19937_64 rng(7);
  Matrix q = Random(8, 4, rng), k = Random(8, 4, rng), v = Random(8, 4, rng);
  Tape a;
  const Matrix out_a = a.value(
      a.GroupAttention(a.Constant(q), a.Constant(k), a.Constant(v), 4, 1));
  // Changing sample 1 (rows 1, 3, 5, 7) leaves sample 0 untouched.
  for (int row : {1, 3, 5, 7}) v.row(row).setConstant(9.0);
  Tape b;
  const Matrix out_b = b.value(
      b.GroupAttention(b.Constant(q), b.Constant(k), b.Constant(v), 4, 1));
  for (int row : {0, 2, 4, 6}) EXPECT_EQ(out_a.row(row), out_b.row(row));
}

TEST(AutodiffTest, BceMean) {
  std::mt19937_64 rng(8);
  Matrix targets(2, 3);
  targets << 1, 0, 1, 0, 0, 1;
  ExpectGradientsMatch(
      [targets](Tape& t, const auto& x) {
        return t.BceMean(t.Sigmoid(x[0]), targets);
      },
      {Random(2, 3, rng, -2, 2)});
}

TEST(AutodiffTest, BceOfSingleLogitClosedForm) {
  // d/dz of -ln sigmoid(z) is p - 1; at p = 0.25 that is -0.75.
  Tape tape;
  Matrix z(1, 1);
  z(0, 0) = std::log(0.25 / 0.75);
  const auto zid = tape.Variable(z, 0);
  Matrix y(1, 1);
  y(0, 0) = 1.0;
  const auto loss = tape.BceMean(tape.Sigmoid(zid), y);
  EXPECT_NEAR(tape.value(loss)(0, 0), -std::log(0.25), 1e-12);
  tape.Backward(loss);
  EXPECT_NEAR(tape.Gradient(zid)(0, 0), -0.75, 1e-12);
}

TEST(AutodiffTest, SharedInputAccumulates) {
  Tape tape;
  Matrix x(1, 1);
  x(0, 0) = 3.0;
  const auto xid = tape.Variable(x, 0);
  const auto y = tape.Add(tape.Scale(xid, 2.0), xid);
  tape.Backward(y);
  EXPECT_EQ(tape.Gradient(xid)(0, 0), 3.0);
}

TEST(AutodiffTest, BackwardVisitsEachNodeOnceAndOnlyOnce) {
  Tape tape;
  Matrix x = Matrix::Constant(2, 2, 0.5);
  const auto a = tape.Variable(x, 0);
  const auto unused = tape.Variable(x, 1);
  Matrix ones = Matrix::Ones(1, 2);
  const auto s = tape.MatMul(tape.MatMul(tape.Constant(ones), tape.Relu(a)),
                             tape.Constant(ones.transpose()));
  tape.Backward(s);
  EXPECT_LE(tape.visited(), tape.size());
  EXPECT_TRUE(tape.Gradient(unused).isZero());
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.Backward(s), InvalidArgument);
}

TEST(AutodiffTest, ShapeErrors) {
  Tape tape;
  const auto a = tape.Constant(Matrix::Zero(2, 3));
  const auto b = tape.Constant(Matrix::Zero(2, 3));
  EXPECT_THROW(tape.MatMul(a, b), ShapeError);
  EXPECT_THROW(tape.Add(a, tape.Constant(Matrix::Zero(3, 2))), ShapeError);
  EXPECT_THROW(tape.Backward(a), ShapeError);
}

}  // namespace
}  // namespace medcf
