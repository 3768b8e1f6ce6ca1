#include "pc2m/losses.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace pc2m;

namespace {

// dL/dlogits for P = softmax(logits), temperature 1
Eigen::MatrixXd softmax_chain(const Eigen::MatrixXd& p, const Eigen::MatrixXd& grad_p) {
  const Eigen::VectorXd inner = grad_p.cwiseProduct(p).rowwise().sum();
  return p.cwiseProduct(grad_p.colwise() - inner);
}

Eigen::MatrixXd random_logits(std::mt19937_64& rng, int n, int c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::MatrixXd l(n, c);
  for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = g(rng);
  return l;
}

Eigen::MatrixXd plan_for(const PredictionMatrix& p, const DiscreteMeasure& alpha) {
  SinkhornOptions opts;
  opts.tol = 1e-13;
  opts.max_iter = 100000;
  return sinkhorn(gibbs_kernel(p, 1.0), make_patch_marginal(std::size_t(p.rows())), alpha, opts).coupling.values;
}

BatchAlignment identity(int n) {
  BatchAlignment a(static_cast<std::size_t>(n));
  std::iota(a.begin(), a.end(), 0);
  return a;
}

}  // namespace

TEST_CASE("match loss: single patch, single class") {
  const auto p = test::pred({{1.0}});
  const Eigen::MatrixXd q = Eigen::MatrixXd::Ones(1, 1);
  const auto r = match_loss(p, p, q, q, identity(1));
  CHECK(r.cross_terms == 0.0);
  CHECK(r.entropy_terms == doctest::Approx(2.0));
  CHECK(r.value == doctest::Approx(2.0));
}

TEST_CASE("match loss: one-hot plans against 0.75/0.25 predictions") {
  const int n = 4;
  Eigen::MatrixXd p(n, 2), q = Eigen::MatrixXd::Zero(n, 2);
  for (int i = 0; i < n; ++i) {
    const int hot = i % 2;
    p(i, hot) = 0.75;
    p(i, 1 - hot) = 0.25;
    q(i, hot) = 1.0 / n;
  }
  const PredictionMatrix pm(p);
  const auto r = match_loss(pm, pm, q, q, identity(n));
  CHECK(r.cross_terms == doctest::Approx(-2.0 * std::log(0.75)).epsilon(1e-14));
  const double h = -n * (1.0 / n) * (std::log(1.0 / n) - 1.0);
  CHECK(r.entropy_terms == doctest::Approx(2.0 * h).epsilon(1e-14));
}

TEST_CASE("match loss gradient through the softmax matches central differences") {
  std::mt19937_64 rng(101);
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd lg = random_logits(rng, 4, 3), ll = random_logits(rng, 4, 3);
    const auto alpha = test::random_simplex(rng, 3, MeasureRole::AreaTarget);
    const Eigen::MatrixXd qg = plan_for(softmax_rows(lg, 1.0), alpha);
    const Eigen::MatrixXd ql = plan_for(softmax_rows(ll, 1.0), alpha);
    BatchAlignment align = {2, 0, -1, 1};
    auto loss = [&] { return match_loss(softmax_rows(lg, 1.0), softmax_rows(ll, 1.0), qg, ql, align).value; };
    const auto pg = softmax_rows(lg, 1.0), pl = softmax_rows(ll, 1.0);
    const auto r = match_loss(pg, pl, qg, ql, align);
    std::vector<NamedMatrix> params = {{"logits.global", &lg}, {"logits.local", &ll}};
    std::vector<Eigen::MatrixXd> analytic = {softmax_chain(pg.values(), r.grad_p_global),
                                             softmax_chain(pl.values(), r.grad_p_local)};
    const auto report = grad_check(loss, params, analytic);
    INFO(report.worst_parameter << " " << report.max_rel_error);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("match loss drops invalid local rows and rescales the rest") {
  std::mt19937_64 rng(103);
  const auto pg = test::random_prediction(rng, 4, 3), pl = test::random_prediction(rng, 4, 3);
  const auto alpha = test::random_simplex(rng, 3, MeasureRole::AreaTarget);
  const Eigen::MatrixXd qg = plan_for(pg, alpha), ql = plan_for(pl, alpha);
  const BatchAlignment align = {0, -1, 2, -1};
  const auto r = match_loss(pg, pl, qg, ql, align);
  double sum = 0.0;
  for (int i : {0, 2})
    for (int k = 0; k < 3; ++k)
      sum -= qg(align[i], k) * std::log(pl(i, k)) + ql(i, k) * std::log(pg(align[i], k));
  CHECK(r.cross_terms == doctest::Approx(2.0 * sum).epsilon(1e-13));
  CHECK(r.grad_p_local.row(1).isZero());
  CHECK(r.grad_p_local.row(3).isZero());
  CHECK_THROWS_AS(match_loss(pg, pl, qg, ql, BatchAlignment{0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(match_loss(pg, pl, qg, ql, BatchAlignment{0, 1, 2, 4}), std::invalid_argument);
}

TEST_CASE("property: cross terms are nonnegative") {
  std::mt19937_64 rng(107);
  for (int t = 0; t < 200; ++t) {
    const auto pg = test::random_prediction(rng, 8, 4, 2.0), pl = test::random_prediction(rng, 8, 4, 2.0);
    const auto alpha = test::random_simplex(rng, 4, MeasureRole::AreaTarget);
    const auto r = match_loss(pg, pl, plan_for(pg, alpha), plan_for(pl, alpha), identity(8));
    CHECK(r.cross_terms >= 0.0);
    CHECK(r.entropy_terms >= 0.0);
  }
}

TEST_CASE("self-match is a distinct pairing") {
  std::mt19937_64 rng(109);
  const auto pg = test::random_prediction(rng, 6, 3), pl = test::random_prediction(rng, 6, 3);
  const auto alpha = test::random_simplex(rng, 3, MeasureRole::AreaTarget);
  const Eigen::MatrixXd qg = plan_for(pg, alpha), ql = plan_for(pl, alpha);
  MatchOptions self;
  self.mode = MatchMode::Self;
  const auto cross = match_loss(pg, pl, qg, ql, identity(6));
  const auto own = match_loss(pg, pl, qg, ql, identity(6), self);
  const double expect = -(ql.array() * pl.values().array().log()).sum() - (qg.array() * pg.values().array().log()).sum();
  CHECK(own.cross_terms == doctest::Approx(expect).epsilon(1e-13));
  CHECK(own.cross_terms != doctest::Approx(cross.cross_terms));
  const double expect_cross =
      -(qg.array() * pl.values().array().log()).sum() - (ql.array() * pg.values().array().log()).sum();
  CHECK(cross.cross_terms == doctest::Approx(expect_cross).epsilon(1e-13));
}

TEST_CASE("per-patch averaging divides the cross terms by the row count") {
  std::mt19937_64 rng(113);
  const auto pg = test::random_prediction(rng, 5, 3), pl = test::random_prediction(rng, 5, 3);
  const auto alpha = test::random_simplex(rng, 3, MeasureRole::AreaTarget);
  const Eigen::MatrixXd qg = plan_for(pg, alpha), ql = plan_for(pl, alpha);
  MatchOptions avg;
  avg.per_patch_average = true;
  const auto a = match_loss(pg, pl, qg, ql, identity(5));
  const auto b = match_loss(pg, pl, qg, ql, identity(5), avg);
  CHECK(b.cross_terms == doctest::Approx(a.cross_terms / 5.0).epsilon(1e-14));
  CHECK(b.entropy_terms == a.entropy_terms);
}

TEST_CASE("mce loss") {
  Eigen::MatrixXd s(1, 1), y(1, 1);
  s << 0.5;
  y << 1.0;
  CHECK(mce_loss(s, y).value == doctest::Approx(std::log(2.0)));
  Eigen::MatrixXd exact(2, 2), labels(2, 2);
  exact << 1.0, 0.0, 0.0, 1.0;
  labels = exact;
  const auto r = mce_loss(exact, labels);
  CHECK(r.value <= 1e-6);
  CHECK(r.clamped);
  CHECK(r.grad_scores.isZero());
  CHECK_THROWS_AS(mce_loss(Eigen::MatrixXd::Constant(1, 2, 0.5), y), std::invalid_argument);
}

TEST_CASE("mce gradient matches central differences") {
  std::mt19937_64 rng(127);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::bernoulli_distribution coin(0.5);
  Eigen::MatrixXd s(3, 4), y(3, 4);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    s.data()[i] = u(rng);
    y.data()[i] = coin(rng) ? 1.0 : 0.0;
  }
  const auto r = mce_loss(s, y);
  std::vector<NamedMatrix> params = {{"scores", &s}};
  std::vector<Eigen::MatrixXd> analytic = {r.grad_scores};
  const auto report = grad_check([&] { return mce_loss(s, y).value; }, params, analytic);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("pc2m loss is the sum of its parts") {
  std::mt19937_64 rng(131);
  const int images = 2, k = 4, c = 3, n = images * k;
  const auto pg = test::random_prediction(rng, n, c), pl = test::random_prediction(rng, n, c);
  const auto alpha = test::random_simplex(rng, c, MeasureRole::AreaTarget);
  const Eigen::MatrixXd qg = plan_for(pg, alpha), ql = plan_for(pl, alpha);
  Eigen::MatrixXd labels(images, c);
  labels << 1, 1, 0, 1, 0, 1;
  Pc2mInputs in;
  in.p_global = &pg;
  in.p_local = &pl;
  in.q_global = &qg;
  in.q_local = &ql;
  in.alignment = identity(n);
  in.patches_per_image = k;
  in.labels = &labels;
  const auto r = pc2m_loss(in);
  CHECK(r.loss.total == r.loss.match + r.loss.mce);
  CHECK(r.loss.match == doctest::Approx(match_loss(pg, pl, qg, ql, identity(n)).value));
  in.include_match = false;
  const auto warm = pc2m_loss(in);
  CHECK(warm.loss.match == 0.0);
  CHECK(warm.loss.total == warm.loss.mce);
  CHECK(warm.grad_p_local.isZero());

  LossBreakdown b{2.0, 0.6931, 2.6931, 0.0};
  CHECK(b.total == doctest::Approx(b.match + b.mce));
}

TEST_CASE("pc2m gradient on a two-image batch matches central differences") {
  std::mt19937_64 rng(137);
  const int images = 2, k = 4, c = 3, n = images * k;
  Eigen::MatrixXd lg = random_logits(rng, n, c, 2.0), ll = random_logits(rng, n, c, 2.0);
  const auto alpha = test::random_simplex(rng, c, MeasureRole::AreaTarget);
  const Eigen::MatrixXd qg = plan_for(softmax_rows(lg, 1.0), alpha), ql = plan_for(softmax_rows(ll, 1.0), alpha);
  Eigen::MatrixXd labels(images, c);
  labels << 1, 0, 1, 1, 1, 0;
  auto run = [&](const PredictionMatrix& pg, const PredictionMatrix& pl) {
    Pc2mInputs in;
    in.p_global = &pg;
    in.p_local = &pl;
    in.q_global = &qg;
    in.q_local = &ql;
    in.alignment = {1, 0, 3, -1, 4, 5, 7, 6};
    in.patches_per_image = k;
    in.labels = &labels;
    return pc2m_loss(in);
  };
  const auto pg = softmax_rows(lg, 1.0), pl = softmax_rows(ll, 1.0);
  const auto r = run(pg, pl);
  std::vector<NamedMatrix> params = {{"logits.global", &lg}, {"logits.local", &ll}};
  std::vector<Eigen::MatrixXd> analytic = {softmax_chain(pg.values(), r.grad_p_global),
                                           softmax_chain(pl.values(), r.grad_p_local)};
  const auto report = grad_check([&] { return run(softmax_rows(lg, 1.0), softmax_rows(ll, 1.0)).loss.total; },
                                 params, analytic);
  INFO(report.worst_parameter << " " << report.max_rel_error);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("constructed fixed point has zero gradient") {
  // every patch of both images predicts class 0 with near certainty and the labels say {0}
  const int images = 2, k = 3, n = images * k;
  Eigen::MatrixXd p(n, 2);
  for (int i = 0; i < n; ++i) p.row(i) << 1.0 - 1e-9, 1e-9;
  const PredictionMatrix pm(p);
  const Eigen::MatrixXd q = p / double(n);
  Eigen::MatrixXd labels(images, 2);
  labels << 1, 0, 1, 0;
  Pc2mInputs in;
  in.p_global = &pm;
  in.p_local = &pm;
  in.q_global = &q;
  in.q_local = &q;
  in.alignment = identity(n);
  in.patches_per_image = k;
  in.labels = &labels;
  const auto r = pc2m_loss(in);
  const double g = std::sqrt(softmax_chain(p, r.grad_p_global).squaredNorm() + softmax_chain(p, r.grad_p_local).squaredNorm());
  CHECK(g <= 1e-6);
}

TEST_CASE("stop-gradient: analytic gradient follows frozen plans, not recomputed ones") {
  std::mt19937_64 rng(139);
  Eigen::MatrixXd lg = random_logits(rng, 6, 3, 2.0), ll = random_logits(rng, 6, 3, 2.0);
  const auto alpha = test::random_simplex(rng, 3, MeasureRole::AreaTarget);
  const Eigen::MatrixXd qg = plan_for(softmax_rows(lg, 1.0), alpha), ql = plan_for(softmax_rows(ll, 1.0), alpha);
  const auto pg = softmax_rows(lg, 1.0), pl = softmax_rows(ll, 1.0);
  const auto r = match_loss(pg, pl, qg, ql, identity(6));
  std::vector<NamedMatrix> params = {{"logits.global", &lg}, {"logits.local", &ll}};
  std::vector<Eigen::MatrixXd> analytic = {softmax_chain(pg.values(), r.grad_p_global),
                                           softmax_chain(pl.values(), r.grad_p_local)};

  const auto frozen = grad_check(
      [&] { return match_loss(softmax_rows(lg, 1.0), softmax_rows(ll, 1.0), qg, ql, identity(6)).value; }, params,
      analytic);
  CHECK(frozen.max_rel_error <= 1e-4);

  const auto recomputed = grad_check(
      [&] {
        const auto a = softmax_rows(lg, 1.0), b = softmax_rows(ll, 1.0);
        return match_loss(a, b, plan_for(a, alpha), plan_for(b, alpha), identity(6)).value;
      },
      params, analytic);
  CHECK(recomputed.max_rel_error > 1e-3);

  // the plans enter the value, so perturbing them moves the loss
  Eigen::MatrixXd qg2 = qg;
  qg2(0, 0) += 1e-3;
  qg2(0, 1) -= 1e-3;
  CHECK(match_loss(pg, pl, qg2, ql, identity(6)).value != r.value);
}

TEST_CASE("grad_check: linear loss is exact and the worst parameter is named") {
  Eigen::MatrixXd a(2, 2), b(1, 3);
  a << 1, 2, 3, 4;
  b << 5, 6, 7;
  const Eigen::MatrixXd ca = (Eigen::MatrixXd(2, 2) << 0.5, -1, 2, 3).finished();
  const Eigen::MatrixXd cb = (Eigen::MatrixXd(1, 3) << -2, 0.25, 1).finished();
  auto loss = [&] { return a.cwiseProduct(ca).sum() + b.cwiseProduct(cb).sum(); };
  std::vector<NamedMatrix> params = {{"a", &a}, {"b", &b}};
  std::vector<Eigen::MatrixXd> exact = {ca, cb};
  const auto r = grad_check(loss, params, exact);
  CHECK(r.max_rel_error <= 1e-8);  // central differences are exact up to rounding
  CHECK(r.checked == 7);
  CHECK(a(0, 0) == 1.0);  // parameters restored

  std::vector<Eigen::MatrixXd> wrong = {ca, cb};
  wrong[1](0, 2) = 3.0;
  const auto w = grad_check(loss, params, wrong);
  CHECK_FALSE(w.passed);
  CHECK(w.worst_parameter == "b");
  CHECK(w.worst_col == 2);
}
