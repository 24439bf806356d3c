#include <algorithm>

#include <gtest/gtest.h>

#include "dda/algorithms.hpp"
#include "dda/errors.hpp"

using namespace dda;

namespace {

Polyhedron estimation_set() {
  Matrix B(1, 2), C(2, 2);
  B << -2, 1;
  C << 1, 0, 0, -1;
  Vector b(1), c(2);
  b << 0;
  c << 5, 0;
  return Polyhedron(B, b, C, c);
}

Vector xstar() {
  Vector x(2);
  x << 1, 2;
  return x;
}

RunOptions box_options(long long steps) {
  RunOptions o;
  o.steps = steps;
  o.init.box = Matrix(2, 2);
  o.init.box << 0, 5, 0, 5;
  o.reference = xstar();
  return o;
}

}  // namespace

// m = 1 on the interval [lo, hi]: z_k = z_{k-1} - alpha_k g_k, x_k = clamp(z_{k-1}).
TEST(Dda, MatchesScalarDualAveraging) {
  const double lo = -1.0, hi = 0.5, r = 1.7, s2 = 0.4, xs = 0.3;
  Matrix C(2, 1);
  C << 1, -1;
  Vector c(2);
  c << hi, -lo;
  const Polyhedron X(Matrix(0, 1), Vector(0), C, c);
  Vector xsv(1);
  xsv << xs;
  const QuadraticEstimationProblem p(xsv, {Matrix::Constant(1, 1, r)}, {s2});
  const StepSizeSchedule sched(2.0, 0.7);
  RunOptions o;
  o.steps = 500;
  o.init.point = Vector::Constant(1, 2.0);
  Rng rng(17);
  const Trajectory traj = dda_run(p, X, GossipScheme::averaging(1), sched, o, rng);

  Rng mirror(17);
  std::normal_distribution<double> n01(0.0, 1.0);
  double z = 2.0;
  ASSERT_EQ(traj.records.size(), 500u);
  for (long long k = 1; k <= 500; ++k) {
    const double x = std::clamp(z, lo, hi);
    const double u = std::sqrt(r) * n01(mirror);
    const double v = std::sqrt(s2) * n01(mirror);
    const double g = 2.0 * u * (u * (x - xs) - v);
    z -= sched(k) * g;
    const Record& rec = traj.records[static_cast<std::size_t>(k - 1)];
    ASSERT_NEAR(rec.x(0, 0), x, 1e-12) << "k = " << k;
  }
}

TEST(Dda, StationaryAtOptimumWithoutNoise) {
  Vector xs(2);
  xs << 1.0, 1.0;  // interior of the estimation set
  const QuadraticEstimationProblem p(xs, {Matrix::Identity(2, 2)}, {0.0});
  RunOptions o;
  o.steps = 50;
  o.init.point = xs;
  Rng rng(1);
  const Trajectory t = dda_run(p, estimation_set(), GossipScheme::averaging(1), StepSizeSchedule(1.0, 0.7), o, rng);
  for (const Record& r : t.records) EXPECT_LE((r.x.row(0).transpose() - xs).norm(), 1e-15);
}

TEST(Dda, NoiselessInteriorConvergence) {
  Vector xs(2);
  xs << 2.0, 1.0;
  const QuadraticEstimationProblem p(xs, {Matrix::Identity(2, 2)}, {0.0});
  RunOptions o;
  o.steps = 3000;
  o.init.point = Vector::Zero(2);
  o.reference = xs;
  Rng rng(1);
  const Trajectory t = dda_run(p, estimation_set(), GossipScheme::averaging(1), StepSizeSchedule(1.0, 0.7), o, rng);
  EXPECT_LE(t.records.back().dist_to_opt(0), 1e-6);
}

TEST(Dda, FirstDualStepMatchesFormula) {
  const QuadraticEstimationProblem p(xstar(), {Matrix::Identity(2, 2)}, {0.0});
  RunOptions o;
  o.steps = 1;
  o.init.point = xstar();
  Rng rng(1);
  Matrix z1;
  (void)dda_run(p, estimation_set(), GossipScheme::averaging(1), StepSizeSchedule(1.0, 0.7), o, rng,
                [&](const StepView& v) { z1 = *v.z; });
  // z_1 = z_0 - alpha_1 * 2R(x_1 - x*) with x_1 = x* gives z_1 = x*.
  EXPECT_LE((z1.row(0).transpose() - xstar()).norm(), 1e-15);
}

TEST(Dda, DeterministicGivenSeed) {
  Rng irng(3);
  const auto p = generate_instance(5, 2, xstar(), irng, {0.5, 1.0});
  const auto X = estimation_set();
  const auto S = GossipScheme::pairwise(Graph::complete(5));
  Rng a(99), b(99);
  const Trajectory t1 = dda_run(p, X, S, StepSizeSchedule(5.0, 0.67), box_options(300), a);
  const Trajectory t2 = dda_run(p, X, S, StepSizeSchedule(5.0, 0.67), box_options(300), b);
  ASSERT_EQ(t1.records.size(), t2.records.size());
  for (std::size_t i = 0; i < t1.records.size(); ++i) {
    EXPECT_EQ(t1.records[i].x, t2.records[i].x);
    EXPECT_EQ(t1.records[i].xbar, t2.records[i].xbar);
  }
}

TEST(Dda, ZeroStepsGivesEmptyTrajectory) {
  Rng irng(3);
  const auto p = generate_instance(3, 2, xstar(), irng, {0.5, 1.0});
  Rng rng(1);
  const Trajectory t = dda_run(p, estimation_set(), GossipScheme::pairwise(Graph::complete(3)), StepSizeSchedule(5.0, 0.67),
                               box_options(0), rng);
  EXPECT_TRUE(t.records.empty());
  EXPECT_EQ(t.initial.rows(), 3);
}

TEST(Dda, IteratesAreFeasibleAndConsensusShrinks) {
  Rng irng(4);
  const auto p = generate_instance(6, 2, xstar(), irng, {0.5, 1.0});
  const auto X = estimation_set();
  RunOptions o = box_options(3000);
  o.init.per_agent = true;
  Rng rng(5);
  const Trajectory t = dda_run(p, X, GossipScheme::pairwise(Graph::complete(6)), StepSizeSchedule(5.0, 0.67), o, rng);
  for (const Record& r : t.records) {
    for (Eigen::Index j = 0; j < r.x.rows(); ++j) ASSERT_TRUE(X.contains(r.x.row(j).transpose(), 1e-9));
    ASSERT_TRUE(X.contains(r.xbar, 1e-9));
  }
  EXPECT_LT(t.records.back().consensus_error, t.records[10].consensus_error);
}

TEST(Dda, ShapeMismatchIsConfigError) {
  Rng irng(3);
  const auto p = generate_instance(3, 2, xstar(), irng, {0.5, 1.0});
  Rng rng(1);
  EXPECT_THROW((void)dda_run(p, estimation_set(), GossipScheme::pairwise(Graph::complete(4)), StepSizeSchedule(5.0, 0.67),
                             box_options(10), rng),
               ConfigError);
}

TEST(Dpg, IteratesFeasibleAndConverge) {
  Rng irng(6);
  const auto p = generate_instance(5, 2, xstar(), irng, {0.5, 1.0});
  const auto X = estimation_set();
  Rng rng(2);
  const Trajectory t = dpg_run(p, X, GossipScheme::pairwise(Graph::complete(5)), StepSizeSchedule(5.0, 0.67), box_options(5000), rng);
  for (const Record& r : t.records)
    for (Eigen::Index j = 0; j < r.x.rows(); ++j) ASSERT_TRUE(X.contains(r.x.row(j).transpose(), 1e-9));
  EXPECT_LT((t.records.back().xbar - xstar()).norm(), 0.3);
}

TEST(RecordPolicy, DenseThenSparse) {
  RecordPolicy r;
  r.dense_until = 10;
  r.dense_stride = 2;
  r.sparse_stride = 5;
  EXPECT_TRUE(r.should_record(2));
  EXPECT_FALSE(r.should_record(3));
  EXPECT_FALSE(r.should_record(12));
  EXPECT_TRUE(r.should_record(15));
  r.enabled = false;
  EXPECT_FALSE(r.should_record(2));
}

TEST(Decomposition, ExactIdentityOnDoublyStochasticRun) {
  Rng irng(8);
  Vector tilt(2);
  tilt << 1.0, -0.5;
  const auto p = generate_instance(5, 2, xstar(), irng, {0.5, 1.0}, tilt);
  const auto X = estimation_set();
  const auto S = GossipScheme::pairwise(Graph::complete(5));
  const RecursionDecomposer<QuadraticEstimationProblem> dec(p, X, S, xstar());
  RunOptions o = box_options(500);
  o.record.enabled = false;
  double worst = 0.0, worst_zeta = 0.0;
  Rng rng(3);
  (void)dda_run(p, X, S, StepSizeSchedule(5.0, 0.67), o, rng, [&](const StepView& v) {
    const Decomposition d = dec.decompose(v);
    worst = std::max(worst, d.residual.norm());
    worst_zeta = std::max(worst_zeta, d.zeta.norm());
  });
  EXPECT_LE(worst, 1e-10);
  EXPECT_LE(worst_zeta, 1e-10);
}

TEST(Decomposition, RejectsBroadcast) {
  Rng irng(8);
  const auto p = generate_instance(3, 2, xstar(), irng, {0.5, 1.0});
  EXPECT_THROW(RecursionDecomposer<QuadraticEstimationProblem>(p, estimation_set(), GossipScheme::broadcast(Graph::complete(3)), xstar()),
               PreconditionError);
}

TEST(Decomposition, AllTermsVanishAtOptimumWithoutNoise) {
  const QuadraticEstimationProblem p(xstar(), {Matrix::Identity(2, 2)}, {0.0});
  const auto X = estimation_set();
  const RecursionDecomposer<QuadraticEstimationProblem> dec(p, X, GossipScheme::averaging(1), xstar());
  DecompositionInput in;
  in.alpha = 0.1;
  in.xbar = xstar();
  in.mu_prev = Vector::Zero(2);
  in.x = xstar().transpose();
  in.grads = Matrix::Zero(1, 2);
  in.xbar_next = xstar();
  in.mu_next = Vector::Zero(2);
  const Decomposition d = dec.decompose(in);
  EXPECT_EQ(d.delta.norm() + d.zeta.norm() + d.eta.norm() + d.s.norm() + d.eps.norm() + d.residual.norm(), 0.0);
}
